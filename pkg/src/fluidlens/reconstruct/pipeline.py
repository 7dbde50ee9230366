"""Mean-image alignment pipeline built on descriptor flow."""

from __future__ import annotations

from typing import Iterable, Sequence

import numpy as np

from .descriptors import dense_sift
from .flow import FlowParams, estimate_flow, warp
from .stacking import ALL, select_frames, temporal_mean


def _count(frames: Sequence[np.ndarray], n) -> int:
    return len(select_frames(frames, n))


def siftflow_mean(frames: Sequence[np.ndarray], n=ALL, params: FlowParams = FlowParams()) -> np.ndarray:
    """Mean of the first ``n`` frames after aligning each one to their plain mean.

    1. mean image of the first ``n`` frames
    2. dense descriptors of every frame and of the mean
    3. flow from the mean to each frame
    4. backward-warp each frame onto the mean's geometry
    5. average the warped frames
    """
    return siftflow_means(frames, [n], params)[0]


def siftflow_means(frames: Sequence[np.ndarray], ns: Iterable, params: FlowParams = FlowParams()) -> list[np.ndarray]:
    """:func:`siftflow_mean` for several ``n`` at once, sharing frame descriptors."""
    ns = list(ns)
    counts = [_count(frames, n) for n in ns]
    means = {c: temporal_mean(frames, c) for c in set(counts)}
    mean_desc = {c: dense_sift(m, params.cell_size) for c, m in means.items()}
    acc = {c: None for c in means}
    for k in range(max(counts)):
        users = [c for c in means if k < c]
        frame = frames[k]
        fdesc = dense_sift(frame, params.cell_size)
        for c in sorted(users):
            aligned = warp(frame, estimate_flow(mean_desc[c], fdesc, params))
            acc[c] = aligned if acc[c] is None else acc[c] + aligned
    return [acc[c] / c for c in counts]
