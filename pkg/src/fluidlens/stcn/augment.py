"""Training-time augmentation: shared flips, random window start, reversal."""

from __future__ import annotations

import numpy as np

from ..errors import InvalidInputError


def apply_flips(seq: np.ndarray, target: np.ndarray, hflip: bool, vflip: bool):
    """Flip ``(T, H, W, C)`` frames and the ``(H, W, C)`` target the same way."""
    if hflip:
        seq, target = seq[:, :, ::-1], target[:, ::-1]
    if vflip:
        seq, target = seq[:, ::-1], target[::-1]
    return seq, target


def window(frames: np.ndarray, start: int, length: int, reverse: bool = False) -> np.ndarray:
    if start < 0 or start + length > len(frames):
        raise InvalidInputError(f"window [{start}, {start + length}) outside {len(frames)} frames")
    seq = frames[start:start + length]
    return seq[::-1] if reverse else seq


def augment(sample, rng: np.random.Generator, seq_len: int | None = None):
    """Random flips (p=0.5 each), window start and reversal (p=0.5).

    ``sample`` is ``(frames, target)`` with frames ``(F, H, W, C)``. When
    ``seq_len`` is given a window of that length is cut at a uniform start,
    otherwise the whole clip is used.
    """
    frames, target = sample
    frames = np.asarray(frames)
    length = len(frames) if seq_len is None else seq_len
    if len(frames) < length:
        raise InvalidInputError(f"video has {len(frames)} frames, need {length}")
    hflip = bool(rng.random() < 0.5)
    vflip = bool(rng.random() < 0.5)
    start = int(rng.integers(len(frames) - length + 1))
    reverse = bool(rng.random() < 0.5)
    seq = window(frames, start, length, reverse)
    seq, target = apply_flips(seq, np.asarray(target), hflip, vflip)
    return np.ascontiguousarray(seq), np.ascontiguousarray(target)
