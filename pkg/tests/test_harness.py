import json
import math

import numpy as np
import pytest

from fluidlens.datasets import SimConfig, read_dataset
from fluidlens.errors import InvalidInputError
from fluidlens.harness import cli
from fluidlens.harness.corpus import CorpusConfig, synthetic_corpus
from fluidlens.harness.experiments import (ExperimentConfig, ResultRow, ResultsTable, aggregate,
                                           compare_report, run_experiment, trend_flags)
from fluidlens.imaging import read_png, write_png
from fluidlens.reconstruct import ALL, FlowParams
from fluidlens.stcn.model import StcnConfig
from fluidlens.stcn.train import Schedule

SMALL = CorpusConfig(n_videos=4, image_size=(24, 24), sim=SimConfig(fps=10.0, duration=0.6),
                     fractions=(0.5, 0.25, 0.25), seed=5)
FAST_FLOW = FlowParams(search_radius=2, levels=1, icm_sweeps=2)


@pytest.fixture(scope="module")
def small():
    return synthetic_corpus(SMALL)


def row(cid, seed, psnr, l1=1.0, split="test", video="a", **params):
    return ResultRow(cid, seed, split, video, psnr, l1, params)


def test_corpus_deterministic(small):
    again = synthetic_corpus(SMALL)
    assert [len(small.train), len(small.val), len(small.test)] == [2, 1, 1]
    for a, b in zip(small.train + small.test, again.train + again.test):
        assert a.id == b.id and np.array_equal(a.frames, b.frames)
    assert small.train[0].frames.shape == (6, 24, 24, 3)
    assert CorpusConfig.from_json(SMALL.to_json()) == SMALL


def test_experiment_config_roundtrip():
    cfg = ExperimentConfig(name="x", method="stcn", corpus=SMALL, n_frames=[3, ALL], seeds=[1, 2],
                           stcn=StcnConfig(seq_len=2, filters=4), schedule=Schedule(steps=3))
    again = ExperimentConfig.from_json(json.loads(json.dumps(cfg.to_json())))
    assert again.to_json() == cfg.to_json()
    with pytest.raises(InvalidInputError):
        ExperimentConfig(name="x", method="wiener", corpus=SMALL)
    with pytest.raises(InvalidInputError):
        ExperimentConfig(name="x", method="mean")
    with pytest.raises(InvalidInputError):
        ExperimentConfig(name="x", method="mean", corpus=SMALL, n_frames=[0])


def test_single_table_report():
    t = ResultsTable("a", "test", [row("a/mean/n=all", 0, 20.0, method="mean", n="all"),
                                   row("a/mean/n=all", 0, 22.0, video="b", method="mean", n="all")])
    md, js = compare_report([t])
    assert js["ranking"][0]["psnr_mean"] == pytest.approx(21.0)
    assert js["ranking"][0]["psnr_std"] == 0.0
    assert "a/mean/n=all" in md and "test split" in md


def test_identical_tables_zero_spread():
    rows = [row("c", s, 25.0 + s, method="mean", n=5) for s in (0, 1)]
    t = ResultsTable("a", "test", rows)
    _, js = compare_report([t, ResultsTable("a", "test", list(rows))])
    e = js["ranking"][0]
    assert e["psnr_mean"] == pytest.approx(25.5) and e["psnr_std"] == pytest.approx(0.5)
    _, js2 = compare_report([ResultsTable("a", "test", [row("c", 0, 25.0), row("c", 1, 25.0)])])
    assert js2["ranking"][0]["psnr_std"] == 0.0


def test_mixed_splits_and_empty_rejected():
    with pytest.raises(InvalidInputError):
        compare_report([ResultsTable("a", "test", []), ResultsTable("b", "val", [])])
    with pytest.raises(InvalidInputError):
        compare_report([])


def test_ranking_and_inf_serialisation():
    t = ResultsTable("a", "test", [row("lo", 0, 10.0), row("hi", 0, math.inf)])
    md, js = compare_report([t])
    assert [e["config_id"] for e in js["ranking"]] == ["hi", "lo"]
    assert js["ranking"][0]["psnr_mean"] == "inf"
    assert "inf" in md
    back = ResultsTable.from_json(json.loads(t.dumps()))
    assert back.rows[1].psnr == math.inf or back.rows[0].psnr == math.inf


def test_failed_rows_counted():
    t = ResultsTable("a", "test", [row("c", 0, 20.0), ResultRow("c", 0, "test", "b", math.nan, math.nan, {},
                                                                error="boom")])
    e = aggregate([t])[0]
    assert e["failures"] == 1 and e["psnr_mean"] == 20.0
    assert len(t.failed) == 1


def test_trend_flags():
    rows = [row(f"x/mean/n={n}", 0, v, method="mean", n=n) for n, v in ((1, 20.0), (5, 21.0), ("all", 22.0))]
    rows += [row(f"x/stcn-sequence/stacked/L1xB1/T{t}", 0, v, method="stcn", seq_len=t)
             for t, v in ((1, 24.0), (5, 23.0))]
    flags = {f["trend"]: f for f in trend_flags(aggregate([ResultsTable("x", "test", rows)]))}
    assert flags["frame_count_monotonic"]["pass"]
    assert not flags["seq_len_direction"]["pass"]


def test_empty_split_raises(small):
    cfg = ExperimentConfig(name="e", method="mean", corpus=SMALL)
    from fluidlens.stcn.train import TrainingData
    with pytest.raises(InvalidInputError):
        run_experiment(cfg, TrainingData(small.train, small.val, []))


def test_stacking_experiment_deterministic(small, tmp_path):
    cfg = ExperimentConfig(name="s", method="siftflow_mean", corpus=SMALL, n_frames=[2, ALL], flow=FAST_FLOW,
                           output_dir=str(tmp_path / "a"))
    t1 = run_experiment(cfg, small)
    cfg2 = ExperimentConfig.from_json({**cfg.to_json(), "output_dir": str(tmp_path / "b")})
    run_experiment(cfg2, small)
    for name in ("results.json", "report.md", "summary.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert {r.config_id for r in t1.rows} == {"s/siftflow_mean/n=2", "s/siftflow_mean/n=all"}
    assert all(r.error is None for r in t1.rows)
    assert (tmp_path / "a" / "timings.json").is_file()
    assert any((tmp_path / "a" / "images").rglob("*.png"))


def test_stcn_experiment_seeds(small, tmp_path):
    cfg = ExperimentConfig(name="n", method="stcn", corpus=SMALL, seeds=[0, 1],
                           stcn=StcnConfig(layers=1, blocks_per_layer=1, filters=2, seq_len=2),
                           schedule=Schedule(steps=2, batch_size=1, eval_every=2, train_eval_samples=1),
                           write_images=False)
    t = run_experiment(cfg, small)
    assert sorted(r.seed for r in t.rows) == [0, 1]
    assert t.rows[0].config_id == "n/stcn-sequence/non_stacked/L1xB1/T2"
    assert t.dumps() == run_experiment(cfg, small).dumps()


# -- command line ------------------------------------------------------------------------------

def run(argv, capsys=None):
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="module")
def dataset_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = {"shapes": {"image_size": [20, 20]}, "count": 3, "fractions": [0.0, 0.0, 1.0],
           "sim": SimConfig(fps=10.0, duration=0.4).to_json()}
    (root / "ds.json").write_text(json.dumps(cfg))
    assert run(["build-dataset", "--config", root / "ds.json", "--seed", 2, "--out", root / "ds"]) == 0
    return root


def test_cli_gen_shapes_and_simulate(tmp_path):
    (tmp_path / "s.json").write_text(json.dumps({"shapes": {"image_size": [32, 32]}}))
    assert run(["gen-shapes", "--config", tmp_path / "s.json", "--count", 2, "--out", tmp_path / "shapes"]) == 0
    pngs = sorted((tmp_path / "shapes").glob("*.png"))
    assert len(pngs) == 2 and read_png(pngs[0]).shape == (32, 32, 3)
    sim = SimConfig(fps=5.0, duration=0.4).to_json()
    (tmp_path / "sim.json").write_text(json.dumps(sim))
    assert run(["simulate", "--config", tmp_path / "sim.json", "--input", pngs[0], "--out", tmp_path / "vid"]) == 0
    meta = json.loads((tmp_path / "vid" / "simulation.json").read_text())
    assert meta["frame_count"] == 2 and len(list((tmp_path / "vid").glob("*.png"))) == 2


def test_cli_reconstruct_and_report(dataset_dir, tmp_path):
    ds = read_dataset(dataset_dir / "ds")
    assert len(ds.split("test")) == 3
    assert run(["reconstruct", "--input", dataset_dir / "ds", "--method", "median", "--n", 2, "all",
                "--out", tmp_path / "rec"]) == 0
    side = json.loads((tmp_path / "rec" / "reconstruct.json").read_text())
    assert len(side["outputs"]) == 3 and side["n"] == [2, "all"]
    first = next(iter(side["outputs"].values()))
    assert [o["n"] for o in first] == [2, "all"] and all(o["l1"] >= 0 for o in first)
    assert (tmp_path / "rec" / first[0]["path"]).is_file()
    exp = {"name": "cli", "method": "mean", "dataset": str(dataset_dir / "ds"), "n_frames": [1, "all"]}
    (tmp_path / "exp.json").write_text(json.dumps(exp))
    assert run(["eval", "--config", tmp_path / "exp.json", "--out", tmp_path / "ev"]) == 0
    assert run(["report", "--input", tmp_path / "ev" / "results.json", "--out", tmp_path / "rep"]) == 0
    summary = json.loads((tmp_path / "rep" / "summary.json").read_text())
    assert summary["split"] == "test" and len(summary["ranking"]) == 2


def test_cli_blur_sidecar(tmp_path):
    img = np.random.default_rng(0).random((10, 10, 3))
    write_png(tmp_path / "in.png", img)
    assert run(["blur", "--input", tmp_path / "in.png", "--method", "gaussian", "--kernel", 5, "--std", 1.0,
                "--out", tmp_path / "out.png"]) == 0
    side = json.loads((tmp_path / "out.png.json").read_text())
    assert side["spec"]["method"] == "gaussian" and side["spec"]["kernel"] == 5
    assert run(["blur", "--input", tmp_path / "in.png", "--method", "box", "--kernel", 4,
                "--out", tmp_path / "bad.png"]) == 2


def test_cli_train(dataset_dir, tmp_path):
    exp = {"name": "t", "method": "stcn", "corpus": SMALL.to_json(), "split": "test",
           "stcn": StcnConfig(layers=1, blocks_per_layer=1, filters=2, seq_len=2).to_json(),
           "schedule": Schedule(steps=2, batch_size=1, eval_every=1, train_eval_samples=1).to_json()}
    (tmp_path / "t.json").write_text(json.dumps(exp))
    assert run(["train", "--config", tmp_path / "t.json", "--seed", 4, "--out", tmp_path / "m"]) == 0
    assert (tmp_path / "m" / "params.stcn").read_bytes()[:4] == b"STCN"
    assert (tmp_path / "m" / "curves.csv").read_text().count("\n") == 4


def test_cli_exit_codes(dataset_dir, tmp_path, capsys):
    assert run(["reconstruct", "--input", tmp_path / "nowhere", "--out", tmp_path / "r"]) == 2
    assert run(["reconstruct", "--input", dataset_dir / "ds", "--split", "train", "--out", tmp_path / "r"]) == 2
    assert run(["simulate", "--input", tmp_path / "missing.png", "--out", tmp_path / "v"]) == 2
    (tmp_path / "bad.json").write_text("{nope")
    assert run(["eval", "--config", tmp_path / "bad.json"]) == 2
    assert "error:" in capsys.readouterr().err

    # damage a later video so the first one finishes before the failure
    import shutil
    broken = tmp_path / "broken"
    shutil.copytree(dataset_dir / "ds", broken)
    ds = read_dataset(broken)
    victim = ds.frame_paths(ds.split("test")[1])[0]
    victim.write_bytes(victim.read_bytes()[:60])
    assert run(["reconstruct", "--input", broken, "--out", tmp_path / "pr"]) == 3
    side = json.loads((tmp_path / "pr" / "reconstruct.json").read_text())
    assert len(side["outputs"]) == 1
