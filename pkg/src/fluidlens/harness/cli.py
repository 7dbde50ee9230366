"""Command-line entry point.

Exit codes: 0 success, 2 validation failure, 3 runtime failure after
partial progress.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from ..blur import BlurSpec, apply_blur
from ..datasets import ShapesConfig, SimConfig, build_dataset, generate_shapes, read_dataset, simulate_entry
from ..errors import DatasetError, FluidLensError, InvalidInputError, ShapeError
from ..imaging import metrics, read_png, write_png
from ..reconstruct import ALL, FlowParams, siftflow_means, temporal_mean, temporal_median
from ..stcn.io import save_params, write_curves
from ..stcn.train import TrainingData, fit
from .experiments import ExperimentConfig, ResultsTable, compare_report, run_experiment

EXIT_OK, EXIT_INVALID, EXIT_RUNTIME = 0, 2, 3
log = logging.getLogger("fluidlens")


class PartialFailure(Exception):
    """Some work finished before a failure."""


def _load_json(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc}") from None


def _dump(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _selector(s: str):
    return ALL if s.lower() == ALL else int(s)


def _shapes_config(obj: dict, seed: int | None) -> ShapesConfig:
    obj = dict(obj)
    if "image_size" in obj:
        obj["image_size"] = tuple(obj["image_size"])
    for k in ("allowed_shapes", "size_fraction", "background", "shape_color"):
        if k in obj:
            obj[k] = tuple(obj[k])
    if seed is not None:
        obj["seed"] = seed
    try:
        return ShapesConfig(**obj)
    except TypeError as exc:
        raise InvalidInputError(f"bad shapes config: {exc}") from None


def _targets(args, cfg: dict) -> list[np.ndarray]:
    base = _shapes_config(cfg.get("shapes", {}), None)
    count = args.count if args.count is not None else int(cfg.get("count", 10))
    seeds = np.random.default_rng([args.seed, 3]).integers(0, 2**31 - 1, size=count)
    return [generate_shapes(replace(base, seed=int(s))) for s in seeds]


def cmd_gen_shapes(args) -> int:
    cfg = _load_json(args.config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    names = []
    for k, img in enumerate(_targets(args, cfg)):
        name = f"{k:06d}.png"
        write_png(out / name, img)
        names.append(name)
    _dump(out / "shapes.json", {"seed": args.seed, "config": cfg, "images": names})
    return EXIT_OK


def cmd_build_dataset(args) -> int:
    cfg = _load_json(args.config)
    sim = SimConfig.from_json(cfg["sim"]) if "sim" in cfg else SimConfig()
    if args.targets:
        paths = sorted(Path(args.targets).glob("*.png"))
        if not paths:
            raise InvalidInputError(f"no PNG targets in {args.targets}")
        targets = [read_png(p) for p in paths]
    else:
        targets = _targets(args, cfg)
    fractions = tuple(cfg.get("fractions", (0.9, 0.05, 0.05)))
    manifest = build_dataset(targets, args.out, sim, fractions, args.seed)
    print(f"wrote {len(manifest.entries)} videos to {args.out}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _load_json(args.config)
    sim = SimConfig.from_json(cfg) if cfg else SimConfig()
    target = read_png(args.input)
    surface, frames = simulate_entry(target, sim, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for i, frame in enumerate(frames):
        write_png(out / f"{i:06d}.png", frame)
    _dump(out / "simulation.json", {"seed": args.seed, "surface": surface.to_json(), "sim": sim.to_json(),
                                    "input": str(args.input), "frame_count": len(frames)})
    return EXIT_OK


def cmd_reconstruct(args) -> int:
    cfg = _load_json(args.config)
    flow = FlowParams(**cfg.get("flow", {}))
    ds = read_dataset(args.input, check_dims=True)
    entries = ds.split(args.split)
    if not entries:
        raise InvalidInputError(f"split {args.split!r} is empty")
    ns = [_selector(s) for s in args.n]
    out = Path(args.out)
    done = 0
    sidecar = {"method": args.method, "split": args.split, "n": ns,
               "params": flow.to_json() if args.method == "siftflow_mean" else {}, "outputs": {}}
    try:
        for e in entries:
            frames = ds.frames(e)
            target = ds.target(e)
            if args.method == "siftflow_mean":
                recs = siftflow_means(frames, ns, flow)
            else:
                fn = temporal_mean if args.method == "mean" else temporal_median
                recs = [fn(frames, n) for n in ns]
            for n, rec in zip(ns, recs):
                rel = f"{e.id}/{args.method}_n{n}.png"
                (out / e.id).mkdir(parents=True, exist_ok=True)
                write_png(out / rel, rec)
                m = metrics(rec, target)
                sidecar["outputs"].setdefault(e.id, []).append(
                    {"n": n, "path": rel, "psnr": m.to_json()["psnr"], "l1": m.l1})
            done += 1
    except FluidLensError as exc:
        if done:
            _dump(out / "reconstruct.json", sidecar)
            raise PartialFailure(f"{exc} (after {done} videos)") from exc
        raise
    _dump(out / "reconstruct.json", sidecar)
    return EXIT_OK


def cmd_blur(args) -> int:
    std = args.std if args.method == "gaussian" else 0
    sigma = args.sigma if args.method == "bilateral" else 0
    spec = BlurSpec(args.method, args.kernel, gaussian_std=std, bilateral_sigma=sigma)
    img = read_png(args.input)
    write_png(args.out, apply_blur(img, spec, zero_is_noop=args.zero_is_noop))
    _dump(Path(str(args.out) + ".json"), {"input": str(args.input), "spec": spec.to_json(),
                                          "zero_is_noop": args.zero_is_noop})
    return EXIT_OK


def _experiment(args) -> ExperimentConfig:
    cfg = _load_json(args.config)
    if not cfg:
        raise InvalidInputError("--config is required")
    if args.seed is not None:
        cfg["seeds"] = [args.seed]
    if args.split is not None:
        cfg["split"] = args.split
    if args.out is not None:
        cfg["output_dir"] = args.out
    if "n_frames" in cfg:
        cfg["n_frames"] = [_selector(str(n)) for n in cfg["n_frames"]]
    return ExperimentConfig.from_json(cfg)


def cmd_train(args) -> int:
    exp = _experiment(args)
    if exp.method != "stcn":
        raise InvalidInputError("train needs an stcn experiment config")
    data = TrainingData.from_dataset(read_dataset(exp.dataset, check_dims=True)) if exp.dataset else None
    if data is None:
        from .corpus import synthetic_corpus
        data = synthetic_corpus(exp.corpus)
    out = Path(exp.output_dir or ".")
    out.mkdir(parents=True, exist_ok=True)
    schedule = replace(exp.schedule, seed=exp.seeds[0])
    res = fit(exp.stcn, data, exp.mode, schedule, exp.flow, log=log.info)
    save_params(out / "params.stcn", res.config, res.params)
    write_curves(out / "curves.csv", res.curves)
    _dump(out / "train.json", {"experiment": exp.to_json(), "best_step": res.best_step,
                               "params": "params.stcn", "curves": "curves.csv"})
    return EXIT_OK


def cmd_eval(args) -> int:
    exp = _experiment(args)
    table = run_experiment(exp, log=log.info)
    if table.failed:
        raise PartialFailure(f"{len(table.failed)} of {len(table.rows)} rows failed")
    md, _ = compare_report([table])
    print(md, end="")
    return EXIT_OK


def cmd_report(args) -> int:
    tables = [ResultsTable.load(p) for p in args.input]
    md, summary = compare_report(tables)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "summary.md").write_text(md, encoding="utf-8")
    _dump(out / "summary.json", summary)
    print(md, end="")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fluidlens", description="Fluid-lensing simulation and restoration toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, seed_default=0, out_required=True):
        sp.add_argument("--config", help="JSON config file")
        sp.add_argument("--seed", type=int, default=seed_default)
        sp.add_argument("--out", required=out_required, help="output directory or file")
        return sp

    sp = common(sub.add_parser("gen-shapes", help="Generate random-shapes target images"))
    sp.add_argument("--count", type=int)
    sp.set_defaults(func=cmd_gen_shapes)

    sp = common(sub.add_parser("build-dataset", help="Simulate videos and write a dataset with manifest"))
    sp.add_argument("--count", type=int)
    sp.add_argument("--targets", help="directory of target PNGs (default: generate shapes)")
    sp.set_defaults(func=cmd_build_dataset)

    sp = common(sub.add_parser("simulate", help="Render one video from a target image"))
    sp.add_argument("--input", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = common(sub.add_parser("reconstruct", help="Stacking reconstructions for a dataset split"))
    sp.add_argument("--input", required=True, help="dataset root")
    sp.add_argument("--method", choices=("mean", "median", "siftflow_mean"), default="mean")
    sp.add_argument("--n", nargs="+", default=["all"], help="frame counts or 'all'")
    sp.add_argument("--split", choices=("train", "val", "test"), default="test")
    sp.set_defaults(func=cmd_reconstruct)

    sp = common(sub.add_parser("blur", help="Blur an image and echo the spec to a sidecar"))
    sp.add_argument("--input", required=True)
    sp.add_argument("--method", choices=("box", "gaussian", "bilateral"), required=True)
    sp.add_argument("--kernel", type=int, default=5)
    sp.add_argument("--std", type=float, default=0.0)
    sp.add_argument("--sigma", type=float, default=0.0)
    sp.add_argument("--zero-is-noop", action="store_true")
    sp.set_defaults(func=cmd_blur)

    for name, func, text in (("train", cmd_train, "Train an STCN model"),
                             ("eval", cmd_eval, "Run an experiment and write its results table")):
        sp = common(sub.add_parser(name, help=text), seed_default=None, out_required=False)
        sp.add_argument("--split", choices=("train", "val", "test"))
        sp.set_defaults(func=func)

    sp = sub.add_parser("report", help="Compare results tables")
    sp.add_argument("--input", nargs="+", required=True, help="results.json files")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except PartialFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (InvalidInputError, ShapeError, DatasetError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except FluidLensError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
