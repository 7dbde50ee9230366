"""Seeded in-memory corpora used by experiments and acceptance runs."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..datasets import ShapesConfig, SimConfig, assign_splits, entry_seeds, generate_shapes, simulate_entry
from ..sim import SimParams
from ..stcn.train import TrainingData, VideoSample


@dataclass(frozen=True)
class CorpusConfig:
    n_videos: int = 50
    image_size: tuple[int, int] = (64, 64)
    sim: SimConfig = field(default_factory=lambda: SimConfig(fps=10.0, duration=3.0))
    fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)
    seed: int = 0

    def to_json(self) -> dict:
        return {"n_videos": self.n_videos, "image_size": list(self.image_size), "sim": self.sim.to_json(),
                "fractions": list(self.fractions), "seed": self.seed}

    @classmethod
    def from_json(cls, obj: dict) -> "CorpusConfig":
        return cls(n_videos=int(obj["n_videos"]), image_size=tuple(obj["image_size"]),
                   sim=SimConfig.from_json(obj["sim"]), fractions=tuple(obj["fractions"]),
                   seed=int(obj["seed"]))


TOY = CorpusConfig()
RECONSTRUCTION = CorpusConfig(n_videos=20, image_size=(128, 128), sim=SimConfig(fps=50.0, duration=2.0),
                              fractions=(0.0, 0.0, 1.0))


def corpus_targets(config: CorpusConfig) -> list[np.ndarray]:
    seeds = np.random.default_rng([config.seed, 3]).integers(0, 2**31 - 1, size=config.n_videos)
    return [generate_shapes(ShapesConfig(image_size=config.image_size, seed=int(s))) for s in seeds]


def synthetic_corpus(config: CorpusConfig = TOY) -> TrainingData:
    """Targets, seeded surfaces and rendered frames, split the same way as on disk."""
    splits = assign_splits(config.n_videos, config.fractions, config.seed)
    seeds = entry_seeds(config.n_videos, config.seed)
    out = {"train": [], "val": [], "test": []}
    for k, (target, split, s) in enumerate(zip(corpus_targets(config), splits, seeds)):
        _, frames = simulate_entry(target, config.sim, s)
        out[split].append(VideoSample(f"v{k:05d}", np.stack(frames), target))
    return TrainingData(out["train"], out["val"], out["test"])
