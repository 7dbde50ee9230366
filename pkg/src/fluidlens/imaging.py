"""Image buffers, conversions, resampling and quality metrics.

Images are plain ``numpy`` arrays of shape ``(H, W, C)`` with ``C`` in
``{1, 3}`` and values in ``[0, 1]``. Metrics are reported on the 0-255
scale so their magnitudes are comparable to 8-bit quality numbers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image as PILImage

from .errors import InvalidInputError, ShapeError

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])
PSNR_INF = math.inf


def check_image(img: np.ndarray, name: str = "image") -> np.ndarray:
    """Validate an ``(H, W, C)`` image and return it as float64."""
    arr = np.asarray(img, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ShapeError(f"{name} must have shape (H, W, 1|3), got {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name} is empty: {arr.shape}")
    return arr


def new_image(height: int, width: int, channels: int = 3, value: float | Sequence[float] = 0.0) -> np.ndarray:
    if channels not in (1, 3):
        raise InvalidInputError(f"channels must be 1 or 3, got {channels}")
    img = np.empty((height, width, channels), dtype=np.float64)
    img[...] = value
    return img


@dataclass(frozen=True)
class MetricsReport:
    mse: float
    rmse: float
    l1: float
    psnr: float

    def to_json(self) -> dict:
        psnr = "inf" if math.isinf(self.psnr) else self.psnr
        return {"mse": self.mse, "rmse": self.rmse, "l1": self.l1, "psnr": psnr}

    @classmethod
    def from_json(cls, obj: dict) -> "MetricsReport":
        psnr = obj["psnr"]
        psnr = PSNR_INF if psnr == "inf" else float(psnr)
        return cls(float(obj["mse"]), float(obj["rmse"]), float(obj["l1"]), psnr)


def psnr_from_rmse(rmse: float) -> float:
    if rmse <= 0.0:
        return PSNR_INF
    return 20.0 * math.log10(255.0 / rmse)


def metrics(a: np.ndarray, b: np.ndarray) -> MetricsReport:
    """MSE, RMSE, L1 and PSNR between two images on the 0-255 scale.

    Identical images give ``psnr == inf`` rather than a division error.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"metrics: shapes differ {a.shape} vs {b.shape}")
    diff = (a - b) * 255.0
    mse = float(np.mean(diff * diff))
    rmse = math.sqrt(mse)
    l1 = float(np.mean(np.abs(diff)))
    return MetricsReport(mse=mse, rmse=rmse, l1=l1, psnr=psnr_from_rmse(rmse))


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    return metrics(a, b).psnr


def to_grayscale(img: np.ndarray) -> np.ndarray:
    img = check_image(img)
    if img.shape[2] != 3:
        raise InvalidInputError("to_grayscale expects a 3-channel image")
    gray = img @ LUMA_WEIGHTS
    return np.clip(gray, 0.0, 1.0)[..., None]


def _source_coords(n_out: int, n_in: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centre alignment, clamped at the borders
    x = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    x = np.clip(x, 0.0, n_in - 1)
    i0 = np.floor(x).astype(np.intp)
    i1 = np.minimum(i0 + 1, n_in - 1)
    return i0, i1, x - i0


def resize_bilinear(img: np.ndarray, new_h: int, new_w: int) -> np.ndarray:
    img = check_image(img)
    if new_h < 1 or new_w < 1:
        raise InvalidInputError(f"target size must be positive, got {new_h}x{new_w}")
    h, w, _ = img.shape
    if (new_h, new_w) == (h, w):
        return img.copy()
    r0, r1, fr = _source_coords(new_h, h)
    c0, c1, fc = _source_coords(new_w, w)
    fc = fc[None, :, None]
    top = img[r0][:, c0] * (1.0 - fc) + img[r0][:, c1] * fc
    bot = img[r1][:, c0] * (1.0 - fc) + img[r1][:, c1] * fc
    fr = fr[:, None, None]
    out = top * (1.0 - fr) + bot * fr
    return np.clip(out, 0.0, 1.0)


def mean_rgb(images: Iterable[np.ndarray]) -> np.ndarray:
    """Per-channel mean over every pixel of every image (pixel-count weighted)."""
    total = None
    count = 0
    for img in images:
        img = check_image(img)
        s = img.reshape(-1, img.shape[2]).sum(axis=0)
        if total is None:
            total = s
        elif s.shape != total.shape:
            raise InvalidInputError("mean_rgb: images have different channel counts")
        else:
            total = total + s
        count += img.shape[0] * img.shape[1]
    if total is None:
        raise InvalidInputError("mean_rgb needs at least one image")
    return total / count


def sample_bilinear(img: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> np.ndarray:
    """Sample ``img`` at fractional pixel coordinates with clamp-to-edge borders.

    ``rows`` and ``cols`` are index-space coordinates (pixel ``(i, j)`` sits at
    ``(i, j)``) of any common shape ``S``; the result has shape ``S + (C,)``.
    Integer coordinates reproduce the source values exactly.
    """
    h, w = img.shape[:2]
    y = np.clip(rows, 0.0, h - 1)
    x = np.clip(cols, 0.0, w - 1)
    y0 = np.floor(y).astype(np.intp)
    x0 = np.floor(x).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    fy = (y - y0)[..., None]
    fx = (x - x0)[..., None]
    top = img[y0, x0] + (img[y0, x1] - img[y0, x0]) * fx
    bot = img[y1, x0] + (img[y1, x1] - img[y1, x0]) * fx
    return top + (bot - top) * fy


def quantize_u8(img: np.ndarray) -> np.ndarray:
    # round half away from zero; inputs are nonnegative after clipping
    return np.floor(np.clip(img, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def write_png(path: str | Path, img: np.ndarray) -> None:
    img = check_image(img)
    data = quantize_u8(img)
    mode = "L" if data.shape[2] == 1 else "RGB"
    pil = PILImage.fromarray(data[..., 0] if mode == "L" else data, mode=mode)
    pil.save(Path(path), format="PNG", optimize=False, compress_level=6)


def read_png(path: str | Path) -> np.ndarray:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such image: {path}")
    try:
        with PILImage.open(path) as pil:
            if pil.mode not in ("L", "RGB"):
                pil = pil.convert("RGB")
            data = np.asarray(pil, dtype=np.float64) / 255.0
    except (OSError, SyntaxError, ValueError) as exc:
        raise InvalidInputError(f"cannot decode {path}: {exc}") from None
    if data.ndim == 2:
        data = data[..., None]
    return data
