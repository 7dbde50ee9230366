"""Spatial temporal convolutional network: forward pass, losses, exact gradients.

Layout of one forward pass::

    x - mean_rgb -> entry conv (k=3, d=1) -> L x [B residual blocks] -> (time mean) -> 1x1 conv -> + mean_rgb

Block ``BN`` (1-based, within its layer) uses dilation ``2 ** (BN - 1)`` on
every convolved axis and computes ``h + 0.1 * conv(relu(conv(h)))``. The
stacked variant folds the frames into channels and convolves height and
width; the non-stacked variant convolves time, height and width and
averages over time before the projection. With one frame both variants are
the same 2-D network.
"""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from ..errors import InvalidInputError, ShapeError, TrainingDivergenceError
from .ops import conv_nd, conv_nd_backward

VARIANTS = ("stacked", "non_stacked")
LOSSES = ("l1", "mse", "rmse")


@dataclass(frozen=True)
class StcnConfig:
    variant: str = "non_stacked"
    layers: int = 7
    blocks_per_layer: int = 4
    filters: int | None = None
    kernel: int = 3
    seq_len: int = 10
    channels: int = 3
    residual_scale: float = 0.1
    # None: training derives it from the training targets; 0.5 per channel until then
    mean_rgb: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidInputError(f"variant must be one of {VARIANTS}")
        if self.layers < 1 or self.blocks_per_layer < 1 or self.seq_len < 1:
            raise InvalidInputError("layers, blocks_per_layer and seq_len must be >= 1")
        if self.kernel % 2 == 0:
            raise InvalidInputError("kernel must be odd")
        if self.filters is None:
            object.__setattr__(self, "filters", 32 if self.seq_len > 1 else 128)
        if self.mean_rgb is not None:
            mean = tuple(float(m) for m in self.mean_rgb)
            if len(mean) == 1 and self.channels > 1:
                mean = mean * self.channels
            if len(mean) != self.channels:
                raise InvalidInputError("mean_rgb needs one value per channel")
            object.__setattr__(self, "mean_rgb", mean)

    @property
    def offset(self) -> np.ndarray:
        """Per-channel normalization constant actually applied."""
        return np.asarray(self.mean_rgb if self.mean_rgb is not None else (0.5,) * self.channels)

    @property
    def temporal(self) -> bool:
        """Whether convolutions run over a time axis."""
        return self.variant == "non_stacked" and self.seq_len > 1

    @property
    def conv_axes(self) -> int:
        return 3 if self.temporal else 2

    @property
    def input_channels(self) -> int:
        return self.channels * self.seq_len if self.variant == "stacked" else self.channels

    def dilations(self) -> list[int]:
        """Dilation of every block in execution order."""
        return [2 ** (bn - 1) for _ in range(self.layers) for bn in range(1, self.blocks_per_layer + 1)]

    def to_json(self) -> dict:
        d = asdict(self)
        d["mean_rgb"] = list(self.mean_rgb) if self.mean_rgb is not None else None
        return d

    @classmethod
    def from_json(cls, obj: dict) -> "StcnConfig":
        obj = dict(obj)
        if obj.get("mean_rgb") is not None:
            obj["mean_rgb"] = tuple(obj["mean_rgb"])
        return cls(**obj)


def block_names(config: StcnConfig) -> list[str]:
    return [f"layer{l}.block{b}" for l in range(1, config.layers + 1)
            for b in range(1, config.blocks_per_layer + 1)]


def parameter_shapes(config: StcnConfig) -> "OrderedDict[str, tuple[int, ...]]":
    k = (config.kernel,) * config.conv_axes
    f = config.filters
    shapes = OrderedDict()
    shapes["entry.w"] = k + (config.input_channels, f)
    shapes["entry.b"] = (f,)
    for name in block_names(config):
        for conv in ("conv1", "conv2"):
            shapes[f"{name}.{conv}.w"] = k + (f, f)
            shapes[f"{name}.{conv}.b"] = (f,)
    shapes["final.w"] = (1, 1, f, config.channels)
    shapes["final.b"] = (config.channels,)
    return shapes


@dataclass
class StcnParameters:
    """Learnable arrays keyed by name, kept in declaration order."""

    arrays: "OrderedDict[str, np.ndarray]" = field(default_factory=OrderedDict)

    def __getitem__(self, name: str) -> np.ndarray:
        return self.arrays[name]

    def __iter__(self):
        return iter(self.arrays)

    def items(self):
        return self.arrays.items()

    def copy(self) -> "StcnParameters":
        return StcnParameters(OrderedDict((k, v.copy()) for k, v in self.arrays.items()))

    def zeros_like(self) -> "StcnParameters":
        return StcnParameters(OrderedDict((k, np.zeros_like(v)) for k, v in self.arrays.items()))

    @property
    def size(self) -> int:
        return sum(v.size for v in self.arrays.values())

    def all_finite(self) -> bool:
        return all(np.all(np.isfinite(v)) for v in self.arrays.values())


def init_params(config: StcnConfig, seed: int = 0) -> StcnParameters:
    """He-style uniform fan-in initialisation, zero biases."""
    rng = np.random.default_rng(seed)
    arrays = OrderedDict()
    for name, shape in parameter_shapes(config).items():
        if name.endswith(".b"):
            arrays[name] = np.zeros(shape)
        else:
            fan_in = int(np.prod(shape[:-1]))
            bound = math.sqrt(6.0 / fan_in)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return StcnParameters(arrays)


def zero_params(config: StcnConfig) -> StcnParameters:
    return StcnParameters(OrderedDict((n, np.zeros(s)) for n, s in parameter_shapes(config).items()))


def assemble_input(config: StcnConfig, seqs: np.ndarray) -> np.ndarray:
    """Normalise a ``(N, T, H, W, C)`` batch and lay it out for the variant."""
    seqs = np.asarray(seqs, dtype=np.float64)
    if seqs.ndim != 5:
        raise ShapeError(f"expected (N, T, H, W, C) batch, got {seqs.shape}")
    n, t, h, w, c = seqs.shape
    if t != config.seq_len:
        raise InvalidInputError(f"sequence length {t} != configured {config.seq_len}")
    if c != config.channels:
        raise InvalidInputError(f"input has {c} channels, config expects {config.channels}")
    x = seqs - config.offset
    if config.temporal:
        return x
    if config.variant == "stacked":
        return x.transpose(0, 2, 3, 1, 4).reshape(n, h, w, t * c)
    return x[:, 0]


def collapse_time(h: np.ndarray) -> np.ndarray:
    return h.mean(axis=1)


def collapse_time_backward(dh: np.ndarray, t: int) -> np.ndarray:
    return np.repeat(dh[:, None] / t, t, axis=1)


def forward(config: StcnConfig, params: StcnParameters, seqs: np.ndarray,
            keep_cache: bool = False, relu_masks: Sequence[np.ndarray] | None = None):
    """Network output ``(N, H, W, C)`` (unclamped) and, optionally, the cache for backward.

    ``relu_masks`` replaces every block's ReLU by multiplication with a fixed
    0/1 mask; it exists so gradient checks can hold the activation pattern.
    """
    x = assemble_input(config, seqs)
    cache = {"x": x, "blocks": []}
    h = conv_nd(x, params["entry.w"], params["entry.b"], 1)
    s = config.residual_scale
    for k, (name, d) in enumerate(zip(block_names(config), config.dilations())):
        z1 = conv_nd(h, params[f"{name}.conv1.w"], params[f"{name}.conv1.b"], d)
        if relu_masks is None:
            a1 = np.maximum(z1, 0.0)
        else:
            a1 = z1 * relu_masks[k]
        z2 = conv_nd(a1, params[f"{name}.conv2.w"], params[f"{name}.conv2.b"], d)
        if keep_cache:
            cache["blocks"].append((h, z1, a1))
        h = h + s * z2
    if config.temporal:
        h = collapse_time(h)
    if keep_cache:
        cache["features"] = h
    y = conv_nd(h, params["final.w"], params["final.b"], 1) + config.offset
    return (y, cache) if keep_cache else y


def backward(config: StcnConfig, params: StcnParameters, cache: dict, dy: np.ndarray,
             relu_masks: Sequence[np.ndarray] | None = None, need_input_grad: bool = False):
    """Reverse pass from output gradient ``dy``; returns ``(grads, d_input)``."""
    grads = OrderedDict()
    dh, grads["final.w"], grads["final.b"] = conv_nd_backward(cache["features"], params["final.w"], dy, 1)
    if config.temporal:
        dh = collapse_time_backward(dh, config.seq_len)
    s = config.residual_scale
    names = block_names(config)
    dilations = config.dilations()
    block_grads = {}
    for k in range(len(names) - 1, -1, -1):
        name, d = names[k], dilations[k]
        h, z1, a1 = cache["blocks"][k]
        da1, dw2, db2 = conv_nd_backward(a1, params[f"{name}.conv2.w"], s * dh, d)
        mask = (z1 > 0.0) if relu_masks is None else relu_masks[k]
        dz1 = da1 * mask
        dh_branch, dw1, db1 = conv_nd_backward(h, params[f"{name}.conv1.w"], dz1, d)
        dh = dh + dh_branch
        block_grads[name] = (dw1, db1, dw2, db2)
    dx, gw, gb = conv_nd_backward(cache["x"], params["entry.w"], dh, 1, need_dx=need_input_grad)
    ordered = OrderedDict([("entry.w", gw), ("entry.b", gb)])
    for name in names:
        dw1, db1, dw2, db2 = block_grads[name]
        ordered[f"{name}.conv1.w"] = dw1
        ordered[f"{name}.conv1.b"] = db1
        ordered[f"{name}.conv2.w"] = dw2
        ordered[f"{name}.conv2.b"] = db2
    ordered["final.w"] = grads["final.w"]
    ordered["final.b"] = grads["final.b"]
    return StcnParameters(ordered), dx


def loss_value(pred: np.ndarray, target: np.ndarray, loss: str = "l1"):
    """Mean batch loss and its gradient with respect to ``pred``."""
    r = pred - target
    n = r.shape[0]
    m = r[0].size
    if loss == "l1":
        return float(np.mean(np.abs(r))), np.sign(r) / r.size
    if loss == "mse":
        return float(np.mean(r * r)), 2.0 * r / r.size
    if loss == "rmse":
        per = np.sqrt(np.mean(r.reshape(n, -1) ** 2, axis=1))
        safe = np.where(per > 0, per, 1.0)
        g = np.where((per > 0)[:, None, None, None], r / (m * safe[:, None, None, None]), 0.0) / n
        return float(per.mean()), g
    raise InvalidInputError(f"loss must be one of {LOSSES}")


def stack_batch(batch) -> tuple[np.ndarray, np.ndarray]:
    seqs = np.stack([np.asarray(s, dtype=np.float64) for s, _ in batch])
    targets = np.stack([np.asarray(t, dtype=np.float64) for _, t in batch])
    return seqs, targets


def loss_and_gradients(config: StcnConfig, params: StcnParameters, batch, loss: str = "l1",
                       step: int | None = None):
    """Loss of a batch of ``(seq, target)`` pairs and exact parameter gradients.

    ``seq`` is ``(T, H, W, C)``; ``target`` is ``(H, W, C)``.
    """
    seqs, targets = stack_batch(batch)
    pred, cache = forward(config, params, seqs, keep_cache=True)
    value, dy = loss_value(pred, targets, loss)
    if not math.isfinite(value):
        raise TrainingDivergenceError(f"non-finite {loss} loss at step {step}", step=step)
    grads, _ = backward(config, params, cache, dy)
    return value, grads


def predict(config: StcnConfig, params: StcnParameters, seq: np.ndarray) -> np.ndarray:
    """Restored image for one ``(T, H, W, C)`` sequence, clamped for export."""
    y = forward(config, params, np.asarray(seq)[None])
    return np.clip(y[0], 0.0, 1.0)


def stcn_forward(config: StcnConfig, params: StcnParameters, seq: Sequence[np.ndarray]) -> np.ndarray:
    """Unclamped output image for a list of ``T`` frames."""
    if len(seq) != config.seq_len:
        raise InvalidInputError(f"expected {config.seq_len} frames, got {len(seq)}")
    return forward(config, params, np.stack(seq)[None])[0]


def receptive_field(config: StcnConfig) -> dict[str, int]:
    """Analytic input extent seen by one output value, per convolved axis."""
    half = config.kernel // 2
    extent = 1 + 2 * half + sum(2 * (2 * half * d) for d in config.dilations())
    axes = {"height": extent, "width": extent}
    if config.temporal:
        axes["time"] = extent
    return axes


def single_image_config(config: StcnConfig, filters: int | None = None) -> StcnConfig:
    """Same architecture for one-frame input (default 128 filters)."""
    return replace(config, seq_len=1, filters=filters if filters is not None else 128)
