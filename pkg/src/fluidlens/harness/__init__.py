from .corpus import RECONSTRUCTION, TOY, CorpusConfig, synthetic_corpus
from .experiments import (ExperimentConfig, ResultRow, ResultsTable, compare_report, layer_split_ablation,
                          layer_split_table, run_experiment, sequence_length_ablation, sequence_length_table)

__all__ = [
    "CorpusConfig", "ExperimentConfig", "RECONSTRUCTION", "ResultRow", "ResultsTable", "TOY",
    "compare_report", "layer_split_ablation", "layer_split_table", "run_experiment",
    "sequence_length_ablation", "sequence_length_table", "synthetic_corpus",
]
