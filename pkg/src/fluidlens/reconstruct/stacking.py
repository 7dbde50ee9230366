"""Temporal mean and median stacking of video frames."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import InvalidInputError, ShapeError
from ..imaging import check_image

ALL = "all"


def select_frames(frames: Sequence[np.ndarray], n) -> Sequence[np.ndarray]:
    """First ``n`` frames, or all of them for ``n in (None, "all")``."""
    if len(frames) == 0:
        raise InvalidInputError("need at least one frame")
    if n is None or n == ALL:
        return frames
    n = int(n)
    if n < 1 or n > len(frames):
        raise InvalidInputError(f"n={n} outside 1..{len(frames)}")
    return frames[:n]


def temporal_mean(frames: Sequence[np.ndarray], n=ALL) -> np.ndarray:
    """Per-pixel arithmetic mean of the first ``n`` frames.

    Frames are accumulated in order, so the result is bit-identical to a plain
    running sum divided by the count.
    """
    chosen = select_frames(frames, n)
    acc = check_image(chosen[0]).copy()
    for f in chosen[1:]:
        f = np.asarray(f, dtype=np.float64)
        if f.shape != acc.shape:
            raise ShapeError(f"frame shape {f.shape} differs from {acc.shape}")
        acc += f
    return acc / len(chosen)


def temporal_median(frames: Sequence[np.ndarray], n=ALL) -> np.ndarray:
    """Per-pixel, per-channel median; an even count averages the two middle values."""
    chosen = select_frames(frames, n)
    shape = np.shape(chosen[0])
    if any(np.shape(f) != shape for f in chosen):
        raise ShapeError("frames must share one shape")
    return np.median(np.stack([check_image(f) for f in chosen]), axis=0)
