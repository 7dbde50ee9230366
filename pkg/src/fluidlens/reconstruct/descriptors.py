"""Dense per-pixel SIFT descriptors."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..imaging import check_image, to_grayscale

CELLS = 4
ORIENTATIONS = 8
DIM = CELLS * CELLS * ORIENTATIONS


@dataclass
class DescriptorField:
    """``data`` has shape ``(H, W, 128)``; rows are unit-norm or all zero."""

    data: np.ndarray
    _pyramid: list = field(default=None, repr=False, compare=False)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def dim(self) -> int:
        return self.data.shape[2]

    def pyramid(self, levels: int) -> list[np.ndarray]:
        """Finest-first list of 2x block-averaged descriptor images."""
        if self._pyramid is None or len(self._pyramid) < levels:
            pyr = [np.ascontiguousarray(self.data, dtype=np.float32)]
            while len(pyr) < levels:
                pyr.append(_downsample(pyr[-1]))
            self._pyramid = pyr
        return self._pyramid[:levels]


def _downsample(d: np.ndarray) -> np.ndarray:
    h, w = d.shape[:2]
    if h % 2 or w % 2:
        d = np.pad(d, ((0, h % 2), (0, w % 2), (0, 0)), mode="edge")
    out = 0.25 * (d[0::2, 0::2] + d[1::2, 0::2] + d[0::2, 1::2] + d[1::2, 1::2])
    return np.ascontiguousarray(out, dtype=np.float32)


def orientation_energy(gray: np.ndarray) -> np.ndarray:
    """Gradient magnitude split over 8 orientation bins by linear interpolation."""
    p = np.pad(gray, 1, mode="edge")
    gx = 0.5 * (p[1:-1, 2:] - p[1:-1, :-2])
    gy = 0.5 * (p[2:, 1:-1] - p[:-2, 1:-1])
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), 2.0 * np.pi)
    pos = ang * (ORIENTATIONS / (2.0 * np.pi))
    b0 = np.floor(pos).astype(np.intp) % ORIENTATIONS
    frac = pos - np.floor(pos)
    b1 = (b0 + 1) % ORIENTATIONS
    h, w = gray.shape
    out = np.zeros((h, w, ORIENTATIONS))
    ii, jj = np.indices((h, w))
    # b0 != b1 everywhere, so plain fancy assignment has no duplicate indices
    out[ii, jj, b0] = mag * (1.0 - frac)
    out[ii, jj, b1] += mag * frac
    return out


def dense_sift(img: np.ndarray, cell_size: int = 4) -> DescriptorField:
    """128-d descriptor at every pixel from a 4x4 grid of ``cell_size`` cells.

    The grid spans rows ``i - 2s .. i + 2s - 1`` (likewise columns) around
    pixel ``(i, j)``; samples beyond the border are clamped.
    """
    img = check_image(img)
    gray = to_grayscale(img)[..., 0] if img.shape[2] == 3 else img[..., 0]
    energy = orientation_energy(gray)
    h, w = gray.shape
    s = int(cell_size)
    half = CELLS // 2 * s
    pad = np.pad(energy, ((half, half), (half, half), (0, 0)), mode="edge")
    # s x s box sums anchored at their top-left corner
    integral = np.zeros((pad.shape[0] + 1, pad.shape[1] + 1, ORIENTATIONS))
    integral[1:, 1:] = pad.cumsum(0).cumsum(1)
    box = integral[s:, s:] - integral[:-s, s:] - integral[s:, :-s] + integral[:-s, :-s]
    cells = []
    for cy in range(CELLS):
        for cx in range(CELLS):
            cells.append(box[cy * s:cy * s + h, cx * s:cx * s + w])
    desc = np.concatenate(cells, axis=-1)
    norm = np.sqrt(np.sum(desc * desc, axis=-1, keepdims=True))
    safe = np.where(norm > 1e-12, norm, 1.0)
    desc = np.where(norm > 1e-12, desc / safe, 0.0)
    return DescriptorField(desc.astype(np.float32))
