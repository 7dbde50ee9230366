"""Box, Gaussian and bilateral filters plus the randomised blur sampler.

All filters use clamp-to-edge borders and keep values in ``[0, 1]``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInputError
from .imaging import check_image

METHODS = ("box", "gaussian", "bilateral")
KERNEL_GRID = (3, 5, 7, 9)
GAUSSIAN_STD_GRID = (0, 2, 4, 6)
BILATERAL_SIGMA_GRID = (0, 50, 100, 200)


def _check_kernel(kernel: int) -> int:
    kernel = int(kernel)
    if kernel < 1 or kernel % 2 == 0:
        raise InvalidInputError(f"kernel size must be odd and >= 1, got {kernel}")
    return kernel


def default_std(kernel: int) -> float:
    """Size-derived standard deviation used when ``std == 0``."""
    return 0.3 * ((kernel - 1) / 2 - 1) + 0.8


def gaussian_kernel1d(kernel: int, std: float) -> np.ndarray:
    kernel = _check_kernel(kernel)
    if std < 0:
        raise InvalidInputError("std must be >= 0")
    if std == 0:
        std = default_std(kernel)
    x = np.arange(kernel) - kernel // 2
    w = np.exp(-(x * x) / (2.0 * std * std))
    return w / w.sum()


def box_kernel1d(kernel: int) -> np.ndarray:
    kernel = _check_kernel(kernel)
    return np.full(kernel, 1.0 / kernel)


def _separable_filter(img: np.ndarray, k1d: np.ndarray) -> np.ndarray:
    r = len(k1d) // 2
    if r == 0:
        return img * k1d[0]
    h, w = img.shape[:2]
    pad = np.pad(img, ((r, r), (0, 0), (0, 0)), mode="edge")
    tmp = sum(k1d[i] * pad[i:i + h] for i in range(len(k1d)))
    pad = np.pad(tmp, ((0, 0), (r, r), (0, 0)), mode="edge")
    return sum(k1d[i] * pad[:, i:i + w] for i in range(len(k1d)))


def box_blur(img: np.ndarray, kernel: int) -> np.ndarray:
    img = check_image(img)
    return np.clip(_separable_filter(img, box_kernel1d(kernel)), 0.0, 1.0)


def gaussian_blur(img: np.ndarray, kernel: int, std: float = 0.0) -> np.ndarray:
    img = check_image(img)
    return np.clip(_separable_filter(img, gaussian_kernel1d(kernel, std)), 0.0, 1.0)


def bilateral_blur(img: np.ndarray, kernel: int, sigma_color: float,
                   sigma_space: float | None = None) -> np.ndarray:
    """Edge-preserving bilateral filter.

    ``sigma_color`` is on the 0-255 intensity scale and compares the full
    colour vector (Euclidean distance). ``sigma_color == 0`` disables the
    range term, leaving a pure spatial Gaussian. ``sigma_space`` defaults to
    ``kernel / 2``.
    """
    img = check_image(img)
    kernel = _check_kernel(kernel)
    if sigma_color < 0:
        raise InvalidInputError("sigma_color must be >= 0")
    if sigma_space is None:
        sigma_space = kernel / 2.0
    r = kernel // 2
    h, w = img.shape[:2]
    pad = np.pad(img, ((r, r), (r, r), (0, 0)), mode="edge")
    acc = np.zeros_like(img)
    norm = np.zeros((h, w, 1))
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            nb = pad[r + dy:r + dy + h, r + dx:r + dx + w]
            wgt = np.exp(-(dx * dx + dy * dy) / (2.0 * sigma_space ** 2))
            if sigma_color > 0:
                d2 = np.sum(((nb - img) * 255.0) ** 2, axis=-1, keepdims=True)
                wgt = wgt * np.exp(-d2 / (2.0 * sigma_color ** 2))
            else:
                wgt = np.full((h, w, 1), wgt)
            acc += wgt * nb
            norm += wgt
    return np.clip(acc / norm, 0.0, 1.0)


@dataclass(frozen=True)
class BlurSpec:
    method: str
    kernel: int
    gaussian_std: float = 0
    bilateral_sigma: float = 0

    def __post_init__(self):
        if self.method not in METHODS:
            raise InvalidInputError(f"unknown blur method {self.method!r}")
        _check_kernel(self.kernel)

    def to_json(self) -> dict:
        return asdict(self)


def apply_blur(img: np.ndarray, spec: BlurSpec, zero_is_noop: bool = False) -> np.ndarray:
    """Apply ``spec``. With ``zero_is_noop`` a zero std/sigma leaves the image as is."""
    if spec.method == "box":
        return box_blur(img, spec.kernel)
    if spec.method == "gaussian":
        if zero_is_noop and spec.gaussian_std == 0:
            return check_image(img).copy()
        return gaussian_blur(img, spec.kernel, spec.gaussian_std)
    if zero_is_noop and spec.bilateral_sigma == 0:
        return check_image(img).copy()
    return bilateral_blur(img, spec.kernel, spec.bilateral_sigma)


def random_blur_spec(rng: np.random.Generator) -> BlurSpec:
    method = METHODS[int(rng.integers(len(METHODS)))]
    kernel = KERNEL_GRID[int(rng.integers(len(KERNEL_GRID)))]
    if method == "gaussian":
        return BlurSpec(method, kernel, gaussian_std=GAUSSIAN_STD_GRID[int(rng.integers(4))])
    if method == "bilateral":
        return BlurSpec(method, kernel, bilateral_sigma=BILATERAL_SIGMA_GRID[int(rng.integers(4))])
    return BlurSpec(method, kernel)


def random_blur(img: np.ndarray, rng: np.random.Generator,
                zero_is_noop: bool = False) -> tuple[np.ndarray, BlurSpec]:
    spec = random_blur_spec(rng)
    return apply_blur(img, spec, zero_is_noop), spec
