"""Dilated 'same' convolutions over two or three axes, with exact backward.

Tensors are channels-last: ``x`` has shape ``(N, *S, C_in)`` and weights have
shape ``(*K, C_in, C_out)`` where ``K`` holds one odd kernel extent per
convolved axis. Padding is zero and equals ``dilation * (k // 2)`` on each
axis, so ``S`` is preserved. Two-axis inputs run through the three-axis
kernels with a singleton leading axis.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ..errors import ShapeError


@njit(cache=True, fastmath=True)
def _fwd(x, w, b, d):
    n_, t_, h_, w_, ci_ = x.shape
    kt, kh, kw, _, co_ = w.shape
    ct, ch, cw = kt // 2, kh // 2, kw // 2
    y = np.empty((n_, t_, h_, w_, co_))
    acc = np.empty(co_)
    for n in range(n_):
        for t in range(t_):
            for i in range(h_):
                for j in range(w_):
                    acc[:] = b
                    for a in range(kt):
                        tt = t + (a - ct) * d
                        if tt < 0 or tt >= t_:
                            continue
                        for p in range(kh):
                            ii = i + (p - ch) * d
                            if ii < 0 or ii >= h_:
                                continue
                            for q in range(kw):
                                jj = j + (q - cw) * d
                                if jj < 0 or jj >= w_:
                                    continue
                                for c in range(ci_):
                                    xv = x[n, tt, ii, jj, c]
                                    for o in range(co_):
                                        acc[o] += xv * w[a, p, q, c, o]
                    y[n, t, i, j, :] = acc
    return y


@njit(cache=True, fastmath=True)
def _bwd(x, w, dy, d, need_dx):
    n_, t_, h_, w_, ci_ = x.shape
    kt, kh, kw, _, co_ = w.shape
    ct, ch, cw = kt // 2, kh // 2, kw // 2
    dw = np.zeros(w.shape)
    dx = np.zeros(x.shape if need_dx else (1, 1, 1, 1, 1))
    for n in range(n_):
        for t in range(t_):
            for i in range(h_):
                for j in range(w_):
                    g = dy[n, t, i, j]
                    for a in range(kt):
                        tt = t + (a - ct) * d
                        if tt < 0 or tt >= t_:
                            continue
                        for p in range(kh):
                            ii = i + (p - ch) * d
                            if ii < 0 or ii >= h_:
                                continue
                            for q in range(kw):
                                jj = j + (q - cw) * d
                                if jj < 0 or jj >= w_:
                                    continue
                                for c in range(ci_):
                                    xv = x[n, tt, ii, jj, c]
                                    s = 0.0
                                    for o in range(co_):
                                        dw[a, p, q, c, o] += xv * g[o]
                                        s += w[a, p, q, c, o] * g[o]
                                    if need_dx:
                                        dx[n, tt, ii, jj, c] += s
    return dx, dw


def _as3d(x: np.ndarray, w: np.ndarray):
    kernel = w.shape[:-2]
    if len(kernel) not in (2, 3):
        raise ShapeError(f"only 2- and 3-axis kernels are supported, got {w.shape}")
    if x.ndim != len(kernel) + 2:
        raise ShapeError(f"input rank {x.ndim} does not match a {len(kernel)}-axis kernel")
    if x.shape[-1] != w.shape[-2]:
        raise ShapeError(f"input has {x.shape[-1]} channels, weights expect {w.shape[-2]}")
    if any(k % 2 == 0 for k in kernel):
        raise ShapeError(f"kernel extents must be odd, got {kernel}")
    x = np.ascontiguousarray(x, dtype=np.float64)
    w = np.ascontiguousarray(w, dtype=np.float64)
    if len(kernel) == 2:
        return x[:, None], w[None], True
    return x, w, False


def conv_nd(x: np.ndarray, w: np.ndarray, b: np.ndarray, dilation: int = 1) -> np.ndarray:
    """Dilated cross-correlation with zero 'same' padding."""
    x3, w3, flat = _as3d(x, w)
    y = _fwd(x3, w3, np.ascontiguousarray(b, dtype=np.float64), int(dilation))
    return y[:, 0] if flat else y


def conv_nd_backward(x: np.ndarray, w: np.ndarray, dy: np.ndarray, dilation: int = 1,
                     need_dx: bool = True):
    """Gradients ``(dx, dw, db)`` of :func:`conv_nd` given upstream ``dy``."""
    x3, w3, flat = _as3d(x, w)
    dy3 = np.ascontiguousarray(dy[:, None] if flat else dy, dtype=np.float64)
    dx, dw = _bwd(x3, w3, dy3, int(dilation), need_dx)
    db = dy3.reshape(-1, dy3.shape[-1]).sum(axis=0)
    dw = dw[0] if flat else dw
    if not need_dx:
        return None, dw, db
    return (dx[:, 0] if flat else dx), dw, db


def relu(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)
