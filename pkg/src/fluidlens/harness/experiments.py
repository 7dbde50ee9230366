"""Experiment configs, per-video results tables, and the comparison report.

Results files hold metrics only, so reruns with the same config and seeds
are byte-identical; wall-clock timings go to a separate ``timings.json``.
"""

from __future__ import annotations

import json
import math
import re
import time
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..datasets import read_dataset
from ..errors import FluidLensError, InvalidInputError
from ..imaging import PSNR_INF, metrics, write_png
from ..reconstruct import ALL, FlowParams, siftflow_means, temporal_mean, temporal_median
from ..stcn.model import StcnConfig
from ..stcn.train import MODES, Schedule, TrainingData, VideoSample, fit, predict_samples
from .corpus import CorpusConfig, synthetic_corpus

STACKING = ("mean", "median", "siftflow_mean")
METHODS = STACKING + ("stcn",)
SPLITS = ("train", "val", "test")


def _selector_json(n):
    return n if n == ALL else int(n)


@dataclass
class ExperimentConfig:
    name: str
    method: str
    dataset: str | None = None
    corpus: CorpusConfig | None = None
    n_frames: list = field(default_factory=lambda: [ALL])
    seeds: list[int] = field(default_factory=lambda: [0])
    split: str = "test"
    output_dir: str | None = None
    flow: FlowParams = field(default_factory=FlowParams)
    stcn: StcnConfig | None = None
    schedule: Schedule = field(default_factory=Schedule)
    mode: str = "sequence"
    write_images: bool = True

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"method must be one of {METHODS}")
        if not self.seeds:
            raise InvalidInputError("seeds must be nonempty")
        if self.split not in SPLITS:
            raise InvalidInputError(f"split must be one of {SPLITS}")
        if self.dataset is None and self.corpus is None:
            raise InvalidInputError("either dataset or corpus is required")
        if self.method == "stcn":
            if self.stcn is None:
                self.stcn = StcnConfig()
            if self.mode not in MODES:
                raise InvalidInputError(f"mode must be one of {MODES}")
        for n in self.n_frames:
            if n != ALL and (not isinstance(n, int) or n < 1):
                raise InvalidInputError(f"bad frame selector {n!r}")

    def to_json(self) -> dict:
        return {
            "name": self.name, "method": self.method, "dataset": self.dataset,
            "corpus": self.corpus.to_json() if self.corpus else None,
            "n_frames": [_selector_json(n) for n in self.n_frames], "seeds": list(self.seeds),
            "split": self.split, "output_dir": self.output_dir, "flow": self.flow.to_json(),
            "stcn": self.stcn.to_json() if self.stcn else None, "schedule": self.schedule.to_json(),
            "mode": self.mode, "write_images": self.write_images,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ExperimentConfig":
        obj = dict(obj)
        if obj.get("corpus") is not None:
            obj["corpus"] = CorpusConfig.from_json(obj["corpus"])
        if obj.get("flow") is not None:
            obj["flow"] = FlowParams(**obj["flow"])
        if obj.get("stcn") is not None:
            obj["stcn"] = StcnConfig.from_json(obj["stcn"])
        if obj.get("schedule") is not None:
            obj["schedule"] = Schedule(**obj["schedule"])
        try:
            return cls(**{k: v for k, v in obj.items() if v is not None or k in ("dataset", "output_dir")})
        except TypeError as exc:
            raise InvalidInputError(f"bad experiment config: {exc}") from None


@dataclass
class ResultRow:
    config_id: str
    seed: int
    split: str
    video: str
    psnr: float
    l1: float
    params: dict = field(default_factory=dict)
    output: str | None = None
    error: str | None = None
    runtime_s: float = 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        d.pop("runtime_s")
        d["psnr"] = _num_json(self.psnr)
        d["l1"] = _num_json(self.l1)
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "ResultRow":
        obj = dict(obj)
        obj["psnr"] = _num_parse(obj["psnr"])
        obj["l1"] = _num_parse(obj["l1"])
        return cls(**obj)


def _num_json(x):
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return None
    if math.isinf(x):
        return "inf"
    return float(x)


def _num_parse(x):
    if x is None:
        return math.nan
    return PSNR_INF if x == "inf" else float(x)


@dataclass
class ResultsTable:
    name: str
    split: str
    rows: list[ResultRow] = field(default_factory=list)

    @property
    def failed(self) -> list[ResultRow]:
        return [r for r in self.rows if r.error is not None]

    def sorted_rows(self) -> list[ResultRow]:
        return sorted(self.rows, key=lambda r: (r.config_id, r.seed, r.video))

    def to_json(self) -> dict:
        return {"name": self.name, "split": self.split, "rows": [r.to_json() for r in self.sorted_rows()]}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    def timings(self) -> dict:
        return {f"{r.config_id}|{r.seed}|{r.video}": r.runtime_s for r in self.sorted_rows()}

    @classmethod
    def from_json(cls, obj: dict) -> "ResultsTable":
        return cls(obj["name"], obj["split"], [ResultRow.from_json(r) for r in obj["rows"]])

    @classmethod
    def load(cls, path) -> "ResultsTable":
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


def _safe(s: str) -> str:
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", s)


def load_data(config: ExperimentConfig) -> TrainingData:
    if config.dataset is not None:
        return TrainingData.from_dataset(read_dataset(config.dataset, check_dims=True))
    return synthetic_corpus(config.corpus)


def stcn_config_id(config: ExperimentConfig) -> str:
    c = config.stcn
    return f"{config.name}/stcn-{config.mode}/{c.variant}/L{c.layers}xB{c.blocks_per_layer}/T{c.seq_len}"


def _stacking_rows(config: ExperimentConfig, videos: Sequence[VideoSample], seed: int, out: Path | None):
    rows = []
    for s in videos:
        frames = list(s.frames)
        t0 = time.perf_counter()
        try:
            if config.method == "siftflow_mean":
                recs = siftflow_means(frames, config.n_frames, config.flow)
            else:
                fn = temporal_mean if config.method == "mean" else temporal_median
                recs = [fn(frames, n) for n in config.n_frames]
            error = None
        except FluidLensError as exc:
            recs, error = [None] * len(config.n_frames), f"{type(exc).__name__}: {exc}"
        per = (time.perf_counter() - t0) / len(config.n_frames)
        for n, rec in zip(config.n_frames, recs):
            cid = f"{config.name}/{config.method}/n={n}"
            rows.append(_row(cid, seed, config.split, s, rec, {"method": config.method, "n": _selector_json(n)},
                             out, error, per))
    return rows


def _row(cid, seed, split, sample, rec, params, out, error, runtime):
    if rec is None:
        return ResultRow(cid, seed, split, sample.id, math.nan, math.nan, params, None, error, runtime)
    m = metrics(rec, sample.target)
    path = None
    if out is not None:
        rel = Path(_safe(cid)) / f"seed{seed}" / f"{sample.id}.png"
        (out / rel).parent.mkdir(parents=True, exist_ok=True)
        write_png(out / rel, rec)
        path = rel.as_posix()
    return ResultRow(cid, seed, split, sample.id, m.psnr, m.l1, params, path, None, runtime)


def _stcn_rows(config: ExperimentConfig, data: TrainingData, videos, seed: int, out: Path | None, log=None):
    cid = stcn_config_id(config)
    c = config.stcn
    info = {"method": "stcn", "mode": config.mode, "variant": c.variant, "layers": c.layers,
            "blocks": c.blocks_per_layer, "seq_len": c.seq_len}
    schedule = replace(config.schedule, seed=seed)
    t0 = time.perf_counter()
    try:
        if config.mode == "frame_blur":
            preds = []
            for s in videos:
                res = fit(c, TrainingData([s]), "frame_blur", schedule, config.flow)
                preds += predict_samples(res.config, res.params, "frame_blur", [s], config.flow)
        else:
            res = fit(c, data, config.mode, schedule, config.flow, log=log)
            preds = predict_samples(res.config, res.params, config.mode, videos, config.flow)
        error = None
    except FluidLensError as exc:
        preds, error = None, f"{type(exc).__name__}: {exc}"
    per = (time.perf_counter() - t0) / max(len(videos), 1)
    if preds is None:
        return [_row(cid, seed, config.split, s, None, info, out, error, per) for s in videos]
    # one evaluation window per video
    return [_row(cid, seed, config.split, s, y, info, out, None, per) for s, (y, _) in zip(videos, preds)]


def run_experiment(config: ExperimentConfig, data: TrainingData | None = None,
                   log: Callable[[str], None] | None = None) -> ResultsTable:
    """Evaluate ``config.method`` on ``config.split`` for every seed.

    Writes ``results.json``, ``timings.json``, ``report.md`` and output
    images under ``config.output_dir`` when it is set.
    """
    data = data if data is not None else load_data(config)
    videos = getattr(data, config.split)
    if not videos:
        raise InvalidInputError(f"split {config.split!r} is empty")
    out = Path(config.output_dir) if config.output_dir else None
    img_out = out / "images" if (out is not None and config.write_images) else None
    table = ResultsTable(config.name, config.split)
    for seed in config.seeds:
        if config.method == "stcn":
            table.rows += _stcn_rows(config, data, videos, seed, img_out, log)
        else:
            table.rows += _stacking_rows(config, videos, seed, img_out)
    if out is not None:
        write_outputs(out, table, config)
    return table


def write_outputs(out: Path, table: ResultsTable, config: ExperimentConfig | None = None) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "results.json").write_text(table.dumps(), encoding="utf-8")
    (out / "timings.json").write_text(json.dumps(table.timings(), indent=2, sort_keys=True) + "\n",
                                      encoding="utf-8")
    if config is not None:
        (out / "experiment.json").write_text(json.dumps(config.to_json(), indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")
    md, summary = compare_report([table])
    (out / "report.md").write_text(md, encoding="utf-8")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


# -- comparison report ---------------------------------------------------------------------------

def _mean_finite_psnr(values):
    vals = list(values)
    if any(math.isinf(v) for v in vals):
        return PSNR_INF
    return float(np.mean(vals))


def aggregate(tables: Sequence[ResultsTable]) -> list[dict]:
    """Per config id: mean over videos per seed, then mean and std across seeds."""
    groups: dict[str, dict[int, list[ResultRow]]] = {}
    params: dict[str, dict] = {}
    for t in tables:
        for r in t.rows:
            groups.setdefault(r.config_id, {}).setdefault(r.seed, []).append(r)
            params.setdefault(r.config_id, r.params)
    out = []
    for cid in sorted(groups):
        per_seed_psnr, per_seed_l1, failures = [], [], 0
        for seed in sorted(groups[cid]):
            rows = groups[cid][seed]
            ok = [r for r in rows if r.error is None]
            failures += len(rows) - len(ok)
            if ok:
                per_seed_psnr.append(_mean_finite_psnr(r.psnr for r in ok))
                per_seed_l1.append(float(np.mean([r.l1 for r in ok])))
        entry = {"config_id": cid, "params": params[cid], "seeds": len(groups[cid]), "failures": failures,
                 "psnr_mean": math.nan, "psnr_std": math.nan, "l1_mean": math.nan, "l1_std": math.nan}
        if per_seed_psnr:
            finite = not any(math.isinf(v) for v in per_seed_psnr)
            entry["psnr_mean"] = float(np.mean(per_seed_psnr)) if finite else PSNR_INF
            entry["psnr_std"] = float(np.std(per_seed_psnr)) if finite else 0.0
            entry["l1_mean"] = float(np.mean(per_seed_l1))
            entry["l1_std"] = float(np.std(per_seed_l1))
        out.append(entry)
    return out


def _n_key(n):
    return math.inf if n == ALL else n


def trend_flags(summary: list[dict]) -> list[dict]:
    """Frame-count monotonicity per stacking method, and T direction per STCN family."""
    flags = []
    by_method: dict[str, list[dict]] = {}
    for e in summary:
        p = e["params"]
        if p.get("method") in STACKING and "n" in p:
            fam = e["config_id"].rsplit("/n=", 1)[0]
            by_method.setdefault(fam, []).append(e)
    for fam, entries in sorted(by_method.items()):
        if len(entries) < 2:
            continue
        entries = sorted(entries, key=lambda e: _n_key(e["params"]["n"]))
        vals = [e["psnr_mean"] for e in entries]
        ok = all(b >= a for a, b in zip(vals, vals[1:]))
        flags.append({"trend": "frame_count_monotonic", "family": fam, "pass": bool(ok),
                      "values": [[_selector_json(e["params"]["n"]), v] for e, v in zip(entries, vals)]})
    by_family: dict[str, list[dict]] = {}
    for e in summary:
        p = e["params"]
        if p.get("method") == "stcn":
            fam = e["config_id"].rsplit("/T", 1)[0]
            by_family.setdefault(fam, []).append(e)
    for fam, entries in sorted(by_family.items()):
        ts = {e["params"]["seq_len"]: e for e in entries}
        if 1 not in ts or len(ts) < 2:
            continue
        hi = max(ts)
        ok = ts[hi]["psnr_mean"] >= ts[1]["psnr_mean"]
        flags.append({"trend": "seq_len_direction", "family": fam, "pass": bool(ok),
                      "values": [[t, ts[t]["psnr_mean"]] for t in sorted(ts)]})
    return flags


def _fmt(x, nd=2):
    if isinstance(x, float) and math.isinf(x):
        return "inf"
    if isinstance(x, float) and math.isnan(x):
        return "n/a"
    return f"{x:.{nd}f}"


def compare_report(tables: Sequence[ResultsTable]) -> tuple[str, dict]:
    """Ranked markdown summary and its JSON twin."""
    if not tables:
        raise InvalidInputError("no tables to compare")
    splits = {t.split for t in tables}
    if len(splits) != 1:
        raise InvalidInputError(f"tables mix splits {sorted(splits)}")
    summary = aggregate(tables)
    ranked = sorted(summary, key=lambda e: (-(e["psnr_mean"] if not math.isnan(e["psnr_mean"]) else -math.inf),
                                            e["config_id"]))
    flags = trend_flags(summary)
    split = splits.pop()
    lines = [f"# Results ({split} split)", "", "| rank | config | seeds | PSNR (dB) | L1 | failures |",
             "|---:|---|---:|---:|---:|---:|"]
    for k, e in enumerate(ranked, 1):
        lines.append(f"| {k} | {e['config_id']} | {e['seeds']} | {_fmt(e['psnr_mean'])} ± {_fmt(e['psnr_std'])} "
                     f"| {_fmt(e['l1_mean'], 3)} ± {_fmt(e['l1_std'], 3)} | {e['failures']} |")
    if flags:
        lines += ["", "## Trends", "", "| trend | family | values | result |", "|---|---|---|---|"]
        for f in flags:
            vals = ", ".join(f"{k}: {_fmt(v)}" for k, v in f["values"])
            lines.append(f"| {f['trend']} | {f['family']} | {vals} | {'pass' if f['pass'] else 'FAIL'} |")
    md = "\n".join(lines) + "\n"
    js = {"split": split, "ranking": [_jsonable(e) for e in ranked], "trends": [_jsonable(f) for f in flags]}
    return md, js


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, float):
        return _num_json(obj)
    return obj


# -- ablations -----------------------------------------------------------------------------------

def sequence_length_ablation(name: str, data: TrainingData, base: StcnConfig, schedule: Schedule,
                             seeds: Sequence[int], lengths: Sequence[int] = (1, 5, 10),
                             variants: Sequence[str] = ("stacked", "non_stacked"),
                             log: Callable[[str], None] | None = None) -> ResultsTable:
    """Test PSNR for every (variant, T) pair and seed."""
    table = ResultsTable(name, "test")
    for variant in variants:
        for t in lengths:
            cfg = ExperimentConfig(name=name, method="stcn", corpus=CorpusConfig(), seeds=list(seeds),
                                   stcn=replace(base, variant=variant, seq_len=t), schedule=schedule,
                                   write_images=False)
            table.rows += run_experiment(cfg, data, log=log).rows
    return table


def layer_split_ablation(name: str, data: TrainingData, base: StcnConfig, schedule: Schedule,
                         seeds: Sequence[int], splits: Sequence[tuple[int, int]] = ((1, 9), (3, 3), (9, 1)),
                         log: Callable[[str], None] | None = None) -> ResultsTable:
    """Fixed total block budget spread over different layer counts."""
    table = ResultsTable(name, "test")
    for layers, blocks in splits:
        cfg = ExperimentConfig(name=name, method="stcn", corpus=CorpusConfig(), seeds=list(seeds),
                               stcn=replace(base, layers=layers, blocks_per_layer=blocks), schedule=schedule,
                               write_images=False)
        table.rows += run_experiment(cfg, data, log=log).rows
    return table


def sequence_length_table(table: ResultsTable) -> str:
    """Markdown grid: one row per variant, one column per sequence length."""
    summary = aggregate([table])
    cells: dict[str, dict[int, dict]] = {}
    for e in summary:
        p = e["params"]
        cells.setdefault(p["variant"], {})[p["seq_len"]] = e
    ts = sorted({t for v in cells.values() for t in v})
    lines = ["| variant | " + " | ".join(f"T={t}" for t in ts) + " |", "|---|" + "---:|" * len(ts)]
    for variant in sorted(cells):
        row = [f"{_fmt(cells[variant][t]['psnr_mean'])} ± {_fmt(cells[variant][t]['psnr_std'])}"
               if t in cells[variant] else "" for t in ts]
        lines.append(f"| {variant} | " + " | ".join(row) + " |")
    return "\n".join(lines) + "\n"


def layer_split_table(table: ResultsTable) -> str:
    summary = aggregate([table])
    lines = ["| model (layers * blocks) | PSNR (dB) | L1 |", "|---|---:|---:|"]
    for e in sorted(summary, key=lambda e: (e["params"]["layers"], e["params"]["blocks"])):
        p = e["params"]
        lines.append(f"| {p['layers']} * {p['blocks']} | {_fmt(e['psnr_mean'])} | {_fmt(e['l1_mean'], 3)} |")
    return "\n".join(lines) + "\n"
