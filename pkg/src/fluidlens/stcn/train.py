"""Seeded training loop for the five input modes.

Every step: draw a batch -> augment -> forward -> loss -> clip -> amsgrad.
Validation runs every ``eval_every`` steps, and the parameters with the
lowest validation L1 are returned.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from ..blur import random_blur
from ..errors import InvalidInputError, TrainingDivergenceError
from ..imaging import mean_rgb, metrics
from ..reconstruct import FlowParams, siftflow_mean, temporal_mean
from .augment import apply_flips, augment
from .model import (LOSSES, StcnConfig, StcnParameters, forward, init_params,
                    loss_and_gradients, single_image_config)
from .optim import OptimState, adam_amsgrad_step, clip_gradients

MODES = ("sequence", "mean_image", "siftflow_mean", "frame_blur", "target_blur")
SINGLE_IMAGE_MODES = MODES[1:]


@dataclass
class VideoSample:
    id: str
    frames: np.ndarray  # (F, H, W, C)
    target: np.ndarray  # (H, W, C)

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        self.target = np.asarray(self.target, dtype=np.float64)


@dataclass
class TrainingData:
    train: list[VideoSample]
    val: list[VideoSample] = field(default_factory=list)
    test: list[VideoSample] = field(default_factory=list)

    @classmethod
    def from_dataset(cls, dataset) -> "TrainingData":
        """Load every split of an on-disk :class:`~fluidlens.datasets.Dataset`."""
        def load(split):
            return [VideoSample(e.id, np.stack(dataset.frames(e)), dataset.target(e))
                    for e in dataset.split(split)]
        return cls(load("train"), load("val"), load("test"))


@dataclass(frozen=True)
class Schedule:
    steps: int = 1000
    batch_size: int = 4
    lr: float = 1e-4
    loss: str = "l1"
    eval_every: int = 50
    clip_norm: float = 1.0
    seed: int = 0
    train_eval_samples: int = 8
    eval_windows: int = 1

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise InvalidInputError(f"loss must be one of {LOSSES}")
        if self.steps < 0 or self.batch_size < 1 or self.eval_every < 1:
            raise InvalidInputError("steps >= 0, batch_size >= 1 and eval_every >= 1 required")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class CurvePoint:
    step: int
    train_l1: float
    val_l1: float
    val_psnr: float


@dataclass
class TrainResult:
    config: StcnConfig
    params: StcnParameters
    curves: list[CurvePoint]
    best_step: int
    initial_train_l1: float
    final_train_l1: float


def mode_config(config: StcnConfig, mode: str) -> StcnConfig:
    """Single-image modes run the one-frame network (128 filters unless already one-frame)."""
    if mode not in MODES:
        raise InvalidInputError(f"mode must be one of {MODES}")
    if mode in SINGLE_IMAGE_MODES and config.seq_len != 1:
        return single_image_config(config)
    return config


def eval_windows(sample: VideoSample, seq_len: int, count: int) -> list[np.ndarray]:
    """``count`` evenly spaced, forward-ordered windows of ``seq_len`` frames."""
    n = len(sample.frames)
    if n < seq_len:
        raise InvalidInputError(f"video {sample.id} has {n} frames, need {seq_len}")
    last = n - seq_len
    starts = sorted({int(round(k * last / max(count - 1, 1))) for k in range(count)}) if count > 1 else [0]
    return [sample.frames[s:s + seq_len] for s in starts]


class _Inputs:
    """Per-mode construction of training draws and evaluation pairs."""

    def __init__(self, mode: str, config: StcnConfig, flow_params: FlowParams):
        self.mode = mode
        self.config = config
        self.flow_params = flow_params
        self._static = {}

    def static_input(self, sample: VideoSample) -> np.ndarray:
        key = (sample.id, id(sample))
        if key not in self._static:
            if self.mode == "siftflow_mean":
                img = siftflow_mean(list(sample.frames), params=self.flow_params)
            else:
                img = temporal_mean(list(sample.frames))
            self._static[key] = img
        return self._static[key]

    def draw(self, videos: Sequence[VideoSample], rng: np.random.Generator):
        sample = videos[int(rng.integers(len(videos)))]
        if self.mode == "sequence":
            return augment((sample.frames, sample.target), rng, self.config.seq_len)
        if self.mode == "frame_blur":
            frame = sample.frames[int(rng.integers(len(sample.frames)))]
            blurred, _ = random_blur(frame, rng)
            return self._flip(blurred, frame, rng)
        if self.mode == "target_blur":
            blurred, _ = random_blur(sample.target, rng)
            return self._flip(blurred, sample.target, rng)
        return self._flip(self.static_input(sample), sample.target, rng)

    @staticmethod
    def _flip(inp, target, rng):
        hflip = bool(rng.random() < 0.5)
        vflip = bool(rng.random() < 0.5)
        seq, tgt = apply_flips(np.asarray(inp)[None], np.asarray(target), hflip, vflip)
        return np.ascontiguousarray(seq), np.ascontiguousarray(tgt)

    def eval_pairs(self, videos: Sequence[VideoSample], windows: int):
        pairs = []
        for s in videos:
            if self.mode == "sequence":
                pairs += [(w, s.target) for w in eval_windows(s, self.config.seq_len, windows)]
            else:
                pairs.append((self.static_input(s)[None], s.target))
        return pairs


def evaluate(config: StcnConfig, params: StcnParameters, pairs, chunk: int = 8) -> tuple[float, float]:
    """Mean L1 and PSNR (0-255 scale) of clamped outputs over ``(seq, target)`` pairs."""
    if not pairs:
        return math.nan, math.nan
    l1, psnrs = [], []
    for k in range(0, len(pairs), chunk):
        part = pairs[k:k + chunk]
        out = np.clip(forward(config, params, np.stack([p[0] for p in part])), 0.0, 1.0)
        for y, (_, t) in zip(out, part):
            m = metrics(y, t)
            l1.append(m.l1)
            psnrs.append(m.psnr)
    return float(np.mean(l1)), float(np.mean(psnrs))


def predict_samples(config: StcnConfig, params: StcnParameters, mode: str, videos: Sequence[VideoSample],
                    flow_params: FlowParams = FlowParams(), windows: int = 1) -> list[tuple[np.ndarray, np.ndarray]]:
    """Clamped model outputs paired with their targets, in evaluation order."""
    inputs = _Inputs(mode, config, flow_params)
    pairs = inputs.eval_pairs(videos, windows)
    return [(np.clip(forward(config, params, seq[None])[0], 0.0, 1.0), t) for seq, t in pairs]


def fit(config: StcnConfig, data: TrainingData, mode: str = "sequence", schedule: Schedule = Schedule(),
        flow_params: FlowParams = FlowParams(), init: StcnParameters | None = None,
        log: Callable[[str], None] | None = None) -> TrainResult:
    config = mode_config(config, mode)
    if not data.train:
        raise InvalidInputError("training split is empty")
    if config.mean_rgb is None:
        config = replace(config, mean_rgb=tuple(mean_rgb(s.target for s in data.train)))
    if mode == "frame_blur" and len(data.train) != 1:
        raise InvalidInputError("frame_blur trains one model per video; pass a single training video")
    rng = np.random.default_rng([schedule.seed, 7])
    params = init if init is not None else init_params(config, schedule.seed)
    state = OptimState(lr=schedule.lr)
    inputs = _Inputs(mode, config, flow_params)

    # fixed subsets, so before/after numbers are comparable
    probe_rng = np.random.default_rng([schedule.seed, 11])
    train_probe = [inputs.draw(data.train, probe_rng) for _ in range(schedule.train_eval_samples)]
    val_videos = data.val if mode != "frame_blur" else data.train
    val_pairs = inputs.eval_pairs(val_videos, schedule.eval_windows)

    def record(step):
        train_l1, _ = evaluate(config, params, train_probe)
        val_l1, val_psnr = evaluate(config, params, val_pairs)
        curves.append(CurvePoint(step, train_l1, val_l1, val_psnr))
        if log:
            log(f"step {step}: train_l1 {train_l1:.3f} val_l1 {val_l1:.3f} val_psnr {val_psnr:.2f}")
        return val_l1

    curves: list[CurvePoint] = []
    best_val = record(0)
    best, best_step = params.copy(), 0
    last_finite = None
    for step in range(1, schedule.steps + 1):
        batch = [inputs.draw(data.train, rng) for _ in range(schedule.batch_size)]
        try:
            loss, grads = loss_and_gradients(config, params, batch, schedule.loss, step=step)
        except TrainingDivergenceError as exc:
            raise TrainingDivergenceError(str(exc), step=step, last_finite_loss=last_finite) from None
        last_finite = loss
        grads = clip_gradients(grads, schedule.clip_norm)
        params, state = adam_amsgrad_step(state, params, grads)
        if not params.all_finite():
            raise TrainingDivergenceError(f"non-finite parameters after step {step}",
                                          step=step, last_finite_loss=last_finite)
        if step % schedule.eval_every == 0 or step == schedule.steps:
            val = record(step)
            if math.isnan(best_val) or val < best_val:
                best_val, best, best_step = val, params.copy(), step
    if not val_pairs:
        best, best_step = params, schedule.steps
    return TrainResult(config, best, curves, best_step, curves[0].train_l1, curves[-1].train_l1)


def train(config: StcnConfig, data: TrainingData, mode: str = "sequence", schedule: Schedule = Schedule(),
          flow_params: FlowParams = FlowParams()) -> tuple[StcnParameters, list[CurvePoint]]:
    """Best-validation parameters and the recorded curves."""
    result = fit(config, data, mode, schedule, flow_params)
    return result.params, result.curves


def train_per_video(config: StcnConfig, data: TrainingData, schedule: Schedule = Schedule(),
                    split: str = "test") -> dict[str, TrainResult]:
    """``frame_blur``: one overfit model per video in ``split``."""
    return {s.id: fit(config, TrainingData([s]), "frame_blur", schedule)
            for s in getattr(data, split)}
