import math
from dataclasses import replace

import numpy as np
import pytest

from fluidlens.errors import InvalidInputError, ShapeError, TrainingDivergenceError
from fluidlens.stcn import io, ops
from fluidlens.stcn.augment import apply_flips, augment
from fluidlens.stcn.model import (LOSSES, StcnConfig, backward, forward, init_params, loss_and_gradients,
                                  loss_value, parameter_shapes, receptive_field, stcn_forward, zero_params)
from fluidlens.stcn.optim import OptimState, adam_amsgrad_step, clip_gradients, global_norm
from fluidlens.stcn.train import CurvePoint, Schedule, TrainingData, VideoSample, fit, mode_config

from gradcheck import numeric_gradient, relative_error


def brute_conv(x, w, b, d):
    """Direct loop reference for 2-axis and 3-axis 'same' dilated correlation."""
    kernel = w.shape[:-2]
    spatial = x.shape[1:-1]
    out = np.zeros(x.shape[:-1] + (w.shape[-1],))
    for n in range(x.shape[0]):
        for pos in np.ndindex(*spatial):
            acc = b.copy()
            for tap in np.ndindex(*kernel):
                src = tuple(p + (t - k // 2) * d for p, t, k in zip(pos, tap, kernel))
                if all(0 <= s < e for s, e in zip(src, spatial)):
                    acc += x[(n,) + src] @ w[tap]
            out[(n,) + pos] = acc
    return out


@pytest.mark.parametrize("axes,d", [(2, 1), (2, 2), (3, 1), (3, 2)])
def test_conv_matches_bruteforce(rng, axes, d):
    shape = (2, 4, 5, 3) if axes == 2 else (1, 3, 4, 5, 2)
    x = rng.standard_normal(shape)
    w = rng.standard_normal((3,) * axes + (shape[-1], 4))
    b = rng.standard_normal(4)
    assert np.abs(ops.conv_nd(x, w, b, d) - brute_conv(x, w, b, d)).max() <= 1e-10


def test_conv_identity_kernel_and_impulse(rng):
    x = rng.standard_normal((1, 9, 9, 2))
    w = np.zeros((3, 3, 2, 2))
    w[1, 1] = np.eye(2)
    for d in (1, 2, 4):
        np.testing.assert_array_equal(ops.conv_nd(x, w, np.zeros(2), d), x)
    imp = np.zeros((1, 11, 11, 1))
    imp[0, 5, 5, 0] = 1.0
    for d in (1, 2, 3):
        y = ops.conv_nd(imp, np.ones((3, 3, 1, 1)), np.zeros(1), d)
        rows, cols = np.nonzero(y[0, ..., 0])
        assert set(rows - 5) == {-d, 0, d} and set(cols - 5) == {-d, 0, d}


def test_conv_backward_is_adjoint(rng):
    x = rng.standard_normal((2, 3, 6, 5, 2))
    w = rng.standard_normal((3, 3, 3, 2, 3))
    dy = rng.standard_normal((2, 3, 6, 5, 3))
    y = ops.conv_nd(x, w, np.zeros(3), 2)
    dx, dw, db = ops.conv_nd_backward(x, w, dy, 2)
    # <dy, conv(x)> is bilinear in (x, w)
    assert np.sum(dy * y) == pytest.approx(np.sum(dx * x), rel=1e-10)
    assert np.sum(dy * y) == pytest.approx(np.sum(dw * w), rel=1e-10)
    np.testing.assert_allclose(db, dy.sum(axis=(0, 1, 2, 3)))


def test_conv_shape_errors():
    with pytest.raises(ShapeError):
        ops.conv_nd(np.zeros((1, 4, 4, 2)), np.zeros((3, 3, 3, 1)), np.zeros(1))
    with pytest.raises(ShapeError):
        ops.conv_nd(np.zeros((1, 4, 4, 2)), np.zeros((2, 2, 2, 1)), np.zeros(1))
    with pytest.raises(ShapeError):
        ops.conv_nd(np.zeros((1, 4, 4, 4, 2)), np.zeros((3, 3, 2, 1)), np.zeros(1))


def test_config_defaults_and_validation():
    assert StcnConfig(seq_len=10).filters == 32
    assert StcnConfig(seq_len=1).filters == 128
    assert StcnConfig(layers=7, blocks_per_layer=4).dilations()[:5] == [1, 2, 4, 8, 1]
    with pytest.raises(InvalidInputError):
        StcnConfig(variant="mixed")
    with pytest.raises(InvalidInputError):
        StcnConfig(layers=0)
    with pytest.raises(InvalidInputError):
        StcnConfig(mean_rgb=(0.5, 0.5))
    cfg = StcnConfig(seq_len=3, filters=4)
    assert StcnConfig.from_json(cfg.to_json()) == cfg


def test_dilation_by_construction():
    for b in range(1, 6):
        cfg = StcnConfig(layers=3, blocks_per_layer=b, filters=2, seq_len=1)
        for k, d in enumerate(cfg.dilations()):
            assert d == 2 ** (k % b)


def test_parameter_layouts():
    s = parameter_shapes(StcnConfig(variant="stacked", layers=1, blocks_per_layer=1, filters=4, seq_len=3))
    assert s["entry.w"] == (3, 3, 9, 4)
    n = parameter_shapes(StcnConfig(variant="non_stacked", layers=1, blocks_per_layer=1, filters=4, seq_len=3))
    assert n["entry.w"] == (3, 3, 3, 3, 4)
    assert list(n)[-2:] == ["final.w", "final.b"]


def test_receptive_field_values():
    assert receptive_field(StcnConfig(layers=1, blocks_per_layer=1, seq_len=1, filters=2))["height"] == 7
    assert receptive_field(StcnConfig(layers=1, blocks_per_layer=2, seq_len=1, filters=2))["width"] == 15
    assert "time" in receptive_field(StcnConfig(seq_len=3, filters=2))
    assert "time" not in receptive_field(StcnConfig(variant="stacked", seq_len=3, filters=2))


def measured_support(cfg, size):
    p = init_params(cfg, 3)
    c = size // 2
    seq = np.broadcast_to(cfg.offset, (cfg.seq_len, size, size, cfg.channels)).copy()
    base = forward(cfg, p, seq[None])[0]
    seq[:, c, c] += 1.0
    diff = np.abs(forward(cfg, p, seq[None])[0] - base).max(axis=2)
    rows, cols = np.nonzero(diff > 0)
    return rows.max() - rows.min() + 1, cols.max() - cols.min() + 1


def test_impulse_support_matches_analytic():
    cfg = StcnConfig(variant="stacked", layers=1, blocks_per_layer=2, filters=3, seq_len=2)
    rf = receptive_field(cfg)["height"]
    assert measured_support(cfg, rf + 6) == (rf, rf)


def test_block_with_dilation_four_support():
    # one block with d = 4 (third block of a layer), entry conv and projection excluded
    x = np.zeros((1, 25, 25, 1))
    x[0, 12, 12] = 1.0
    w = np.ones((3, 3, 1, 1))
    h = ops.conv_nd(ops.conv_nd(x, w, np.zeros(1), 4), w, np.zeros(1), 4)
    rows, _ = np.nonzero(h[0, ..., 0])
    assert rows.max() - rows.min() + 1 == 17


def test_zero_params_output_mean_rgb(rng):
    cfg = StcnConfig(layers=2, blocks_per_layer=2, filters=4, seq_len=3, mean_rgb=(0.2, 0.4, 0.6))
    y = stcn_forward(cfg, zero_params(cfg), list(rng.random((3, 8, 8, 3))))
    np.testing.assert_array_equal(y, np.broadcast_to([0.2, 0.4, 0.6], (8, 8, 3)))
    with pytest.raises(InvalidInputError):
        stcn_forward(cfg, zero_params(cfg), list(rng.random((2, 8, 8, 3))))


def test_zero_block_weights_is_residual_identity(rng):
    cfg = StcnConfig(layers=2, blocks_per_layer=2, filters=4, seq_len=1)
    p = init_params(cfg, 0)
    for name in p:
        if ".block" in name:
            p.arrays[name][...] = 0
    seq = rng.random((1, 1, 8, 8, 3))
    _, cache = forward(cfg, p, seq, keep_cache=True)
    first = cache["blocks"][0][0]
    np.testing.assert_array_equal(cache["features"], first)


def test_t1_variants_identical(rng):
    a = StcnConfig(variant="stacked", layers=2, blocks_per_layer=2, filters=4, seq_len=1)
    b = StcnConfig(variant="non_stacked", layers=2, blocks_per_layer=2, filters=4, seq_len=1)
    assert parameter_shapes(a) == parameter_shapes(b)
    p = init_params(a, 5)
    x = rng.random((2, 1, 8, 8, 3))
    np.testing.assert_array_equal(forward(a, p, x), forward(b, p, x))


def test_output_shape_contract(rng):
    for variant in ("stacked", "non_stacked"):
        for t in (1, 2, 4):
            cfg = StcnConfig(variant=variant, layers=1, blocks_per_layer=2, filters=2, seq_len=t)
            y = forward(cfg, init_params(cfg), rng.random((1, t, 7, 9, 3)))
            assert y.shape == (1, 7, 9, 3)


def test_wrong_inputs_rejected(rng):
    cfg = StcnConfig(layers=1, blocks_per_layer=1, filters=2, seq_len=3)
    with pytest.raises(InvalidInputError):
        forward(cfg, init_params(cfg), rng.random((1, 2, 5, 5, 3)))
    with pytest.raises(ShapeError):
        forward(cfg, init_params(cfg), rng.random((2, 5, 5, 3)))


@pytest.mark.parametrize("variant", ["stacked", "non_stacked"])
@pytest.mark.parametrize("loss", LOSSES)
def test_gradients_sampled_entries(rng, variant, loss):
    cfg = StcnConfig(variant=variant, layers=1, blocks_per_layer=2, filters=3, seq_len=2)
    p = init_params(cfg, 2)
    batch = [(rng.random((2, 8, 8, 3)), rng.random((8, 8, 3))) for _ in range(2)]
    _, g = loss_and_gradients(cfg, p, batch, loss)
    for name in p:
        arr = p[name]
        for _ in range(2):
            idx = tuple(int(rng.integers(s)) for s in arr.shape)
            n, _ = numeric_gradient(cfg, p, batch, name, idx, loss)
            assert relative_error(g[name][idx], n) < 1e-4, (name, idx)


def test_mse_zero_residual_gives_zero_gradients(rng):
    cfg = StcnConfig(layers=1, blocks_per_layer=1, filters=2, seq_len=2)
    p = init_params(cfg, 1)
    seq = rng.random((2, 6, 6, 3))
    target = forward(cfg, p, seq[None])[0]
    _, g = loss_and_gradients(cfg, p, [(seq, target)], "mse")
    assert all(np.all(v == 0) for v in g.arrays.values())


def test_duplicate_batch_invariance(rng):
    cfg = StcnConfig(layers=1, blocks_per_layer=1, filters=2, seq_len=2)
    p = init_params(cfg, 1)
    batch = [(rng.random((2, 6, 6, 3)), rng.random((6, 6, 3))) for _ in range(2)]
    for loss in LOSSES:
        l1, g1 = loss_and_gradients(cfg, p, batch, loss)
        l2, g2 = loss_and_gradients(cfg, p, batch + batch, loss)
        assert l1 == pytest.approx(l2, rel=1e-12)
        for k in g1:
            np.testing.assert_allclose(g1[k], g2[k], rtol=1e-10, atol=1e-15)


def test_l1_subgradient_zero():
    value, g = loss_value(np.zeros((1, 2, 2, 1)), np.zeros((1, 2, 2, 1)), "l1")
    assert value == 0 and np.all(g == 0)
    with pytest.raises(InvalidInputError):
        loss_value(np.zeros(1), np.zeros(1), "huber")


def test_non_finite_loss_raises(rng):
    cfg = StcnConfig(layers=1, blocks_per_layer=1, filters=2, seq_len=1)
    p = init_params(cfg)
    p.arrays["final.b"][:] = np.inf
    with pytest.raises(TrainingDivergenceError) as exc:
        loss_and_gradients(cfg, p, [(rng.random((1, 4, 4, 3)), rng.random((4, 4, 3)))], step=7)
    assert exc.value.step == 7


def test_flip_equivariance_of_zero_network(rng):
    cfg = StcnConfig(layers=1, blocks_per_layer=1, filters=2, seq_len=3)
    p = zero_params(cfg)
    seq, tgt = rng.random((3, 6, 7, 3)), rng.random((6, 7, 3))
    base, _ = loss_and_gradients(cfg, p, [(seq, tgt)])
    for h in (False, True):
        for v in (False, True):
            s2, t2 = apply_flips(seq, tgt, h, v)
            assert loss_and_gradients(cfg, p, [(s2, t2)])[0] == pytest.approx(base, rel=1e-12)


def test_clip_gradients():
    cfg = StcnConfig(layers=1, blocks_per_layer=1, filters=2, seq_len=1)
    g = zero_params(cfg)
    g.arrays["entry.b"][:2] = [0.3, 0.4]
    assert clip_gradients(g, 1.0) is g
    g.arrays["entry.b"][:2] = [2.4, 3.2]
    c = clip_gradients(g, 1.0)
    assert global_norm(c) == pytest.approx(1.0, abs=1e-12)
    a, b = g["entry.b"], c["entry.b"]
    assert np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)) == pytest.approx(1.0, abs=1e-12)


def test_amsgrad_first_step_and_zero_stream(rng):
    cfg = StcnConfig(layers=1, blocks_per_layer=1, filters=2, seq_len=1)
    p = init_params(cfg, 0)
    g = p.zeros_like()
    g.arrays["entry.b"][:] = [0.5, -2.0]
    st = OptimState(lr=1e-3)
    p2, st = adam_amsgrad_step(st, p, g)
    np.testing.assert_allclose(p2["entry.b"] - p["entry.b"], [-1e-3, 1e-3], rtol=1e-6)
    np.testing.assert_array_equal(p2["entry.w"], p["entry.w"])
    vmax_prev = {k: v.copy() for k, v in st.v_max.items()}
    for _ in range(5):
        g2 = p.zeros_like()
        g2.arrays["entry.b"][:] = rng.standard_normal(2) * 0.1
        p2, st = adam_amsgrad_step(st, p2, g2)
        for k in st.v_max:
            assert np.all(st.v_max[k] >= vmax_prev[k])
            vmax_prev[k] = st.v_max[k].copy()
    q, st2 = p.copy(), OptimState()
    for _ in range(10):
        q, st2 = adam_amsgrad_step(st2, q, p.zeros_like())
    for k in p:
        np.testing.assert_array_equal(q[k], p[k])


def test_augment_consistency_and_frequencies():
    frames = np.zeros((6, 5, 5, 3))
    target = np.zeros((5, 5, 3))
    frames[:, 0, 0] = 1.0
    target[0, 0] = 1.0
    frames[np.arange(6), 1, 1, 0] = np.arange(6)
    r = np.random.default_rng(0)
    h = v = rev = 0
    n = 10_000
    for _ in range(n):
        seq, tgt = augment((frames, target), r, 3)
        assert seq.shape == (3, 5, 5, 3)
        corner = tuple(np.argwhere(tgt[..., 1] == 1.0)[0])
        assert np.all(seq[:, corner[0], corner[1], 1] == 1.0)
        h += corner[1] == 4
        v += corner[0] == 4
        ramp = seq[:, 1 if corner[0] == 0 else 3, 1 if corner[1] == 0 else 3, 0]
        rev += ramp[0] > ramp[-1]
    for count in (h, v, rev):
        assert abs(count / n - 0.5) < 0.02
    with pytest.raises(InvalidInputError):
        augment((frames, target), r, 7)


def test_forced_flips_are_involutions(rng):
    seq, tgt = rng.random((2, 4, 5, 3)), rng.random((4, 5, 3))
    for h in (False, True):
        for v in (False, True):
            s1, t1 = apply_flips(*apply_flips(seq, tgt, h, v), h, v)
            np.testing.assert_array_equal(s1, seq)
            np.testing.assert_array_equal(t1, tgt)


def test_param_file_roundtrip(tmp_path):
    cfg = StcnConfig(variant="stacked", layers=2, blocks_per_layer=1, filters=3, seq_len=2)
    p = init_params(cfg, 9)
    io.save_params(tmp_path / "m.stcn", cfg, p)
    blob = (tmp_path / "m.stcn").read_bytes()
    assert blob[:4] == b"STCN"
    cfg2, p2 = io.load_params(tmp_path / "m.stcn")
    assert cfg2 == cfg
    for k in p:
        np.testing.assert_array_equal(p[k], p2[k])
    with pytest.raises(InvalidInputError):
        io.loads_params(b"NOPE" + blob[4:])
    with pytest.raises(InvalidInputError):
        io.loads_params(blob[:-8])


def test_curves_csv(tmp_path):
    curves = [CurvePoint(0, 10.0, 11.0, 20.5), CurvePoint(5, 5.0, 6.25, math.inf)]
    io.write_curves(tmp_path / "c.csv", curves)
    text = (tmp_path / "c.csv").read_text()
    assert text.splitlines()[0] == "step,train_l1,val_l1,val_psnr"
    rows = io.read_curves(tmp_path / "c.csv")
    assert rows[1]["step"] == 5 and rows[1]["val_psnr"] == math.inf


def tiny_data(rng, n=3, frames=4, size=8):
    def vid(k):
        t = rng.random((size, size, 3))
        return VideoSample(f"v{k}", np.clip(t + 0.05 * rng.standard_normal((frames, size, size, 3)), 0, 1), t)
    return TrainingData([vid(k) for k in range(n)], [vid(n)], [vid(n + 1)])


def test_training_deterministic_and_improves(rng):
    data = tiny_data(rng)
    cfg = StcnConfig(layers=1, blocks_per_layer=1, filters=4, seq_len=2)
    sch = Schedule(steps=12, batch_size=2, lr=1e-2, eval_every=4, seed=3, train_eval_samples=4)
    a = fit(cfg, data, "sequence", sch)
    b = fit(cfg, data, "sequence", sch)
    assert a.curves == b.curves
    for k in a.params:
        assert a.params[k].tobytes() == b.params[k].tobytes()
    assert [c.step for c in a.curves] == [0, 4, 8, 12]
    assert a.final_train_l1 < a.initial_train_l1
    best = min(a.curves, key=lambda c: c.val_l1)
    assert a.best_step == best.step


@pytest.mark.parametrize("mode", ["mean_image", "siftflow_mean", "target_blur"])
def test_single_image_modes_run(rng, mode):
    data = tiny_data(rng, size=16)
    cfg = StcnConfig(layers=1, blocks_per_layer=1, filters=2, seq_len=2)
    res = fit(replace_seq1(cfg), data, mode, Schedule(steps=2, batch_size=1, eval_every=1, train_eval_samples=1))
    assert res.config.seq_len == 1
    assert len(res.curves) == 3


def replace_seq1(cfg):
    return replace(cfg, seq_len=1)


def test_mode_config_forces_single_frame():
    cfg = mode_config(StcnConfig(seq_len=5, filters=8), "mean_image")
    assert cfg.seq_len == 1 and cfg.filters == 128
    assert mode_config(StcnConfig(seq_len=5, filters=8), "sequence").filters == 8
    with pytest.raises(InvalidInputError):
        mode_config(StcnConfig(), "bogus")


def test_frame_blur_one_video(rng):
    data = tiny_data(rng, size=12)
    cfg = StcnConfig(layers=1, blocks_per_layer=1, filters=2, seq_len=1)
    with pytest.raises(InvalidInputError):
        fit(cfg, data, "frame_blur", Schedule(steps=1))
    res = fit(cfg, TrainingData([data.train[0]]), "frame_blur",
              Schedule(steps=2, batch_size=1, eval_every=2, train_eval_samples=1))
    assert len(res.curves) == 2


def test_divergence_reports_step(rng):
    data = tiny_data(rng)
    cfg = StcnConfig(layers=1, blocks_per_layer=1, filters=2, seq_len=2)
    p = init_params(cfg)
    p.arrays["final.b"][:] = np.nan
    with pytest.raises(TrainingDivergenceError) as exc:
        fit(cfg, data, "sequence", Schedule(steps=3, batch_size=1, train_eval_samples=1), init=p)
    assert exc.value.step == 1


def test_fit_derives_mean_rgb_from_targets(rng):
    data = tiny_data(rng)
    cfg = StcnConfig(layers=1, blocks_per_layer=1, filters=2, seq_len=2)
    res = fit(cfg, data, "sequence", Schedule(steps=0, train_eval_samples=1))
    expect = np.mean(np.stack([s.target for s in data.train]), axis=(0, 1, 2))
    np.testing.assert_allclose(res.config.mean_rgb, expect, rtol=1e-12)
    fixed = fit(replace(cfg, mean_rgb=(0.3, 0.3, 0.3)), data, "sequence", Schedule(steps=0, train_eval_samples=1))
    assert fixed.config.mean_rgb == (0.3, 0.3, 0.3)
