"""Dense descriptor-matching flow and backward warping.

The flow minimises

    E(w) = sum_p min(|src(p) - dst(p + w(p))|_1, truncation)
           + smoothness_weight * sum_{p~q} (|u_p - u_q| + |v_p - v_q|)

over integer displacements, coarse to fine over a 2x descriptor pyramid.
At each level every pixel searches a ``(2r+1)^2`` window around the
upsampled coarser estimate. The discrete problem is initialised by
winner-take-all and refined with alternating-direction ICM sweeps; the
level result is never worse than the level's starting field or, when that
field is constant, the best constant displacement in the window. Candidates
that fall outside the destination image take the truncation cost.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from numba import njit

from ..errors import InvalidInputError, ShapeError
from ..imaging import check_image, sample_bilinear
from ..sim import FlowField
from .descriptors import DescriptorField


@dataclass(frozen=True)
class FlowParams:
    search_radius: int = 4
    levels: int = 3
    smoothness_weight: float = 0.005 * 128
    truncation: float = 4.0
    cell_size: int = 4
    icm_sweeps: int = 6

    def __post_init__(self):
        if self.search_radius < 1 or self.levels < 1:
            raise InvalidInputError("search_radius and levels must be >= 1")
        if self.smoothness_weight < 0 or self.truncation < 0:
            raise InvalidInputError("smoothness_weight and truncation must be >= 0")

    def to_json(self) -> dict:
        return asdict(self)


def window_offsets(radius: int) -> np.ndarray:
    """``(L, 2)`` int offsets ``(du, dv)`` ordered by L1 length, then row-major."""
    r = np.arange(-radius, radius + 1)
    du, dv = np.meshgrid(r, r)
    offs = np.stack([du.ravel(), dv.ravel()], axis=1)
    key = np.abs(offs).sum(1) * (4 * radius + 4) ** 2 + (offs[:, 1] + radius) * (2 * radius + 1) + offs[:, 0]
    return np.ascontiguousarray(offs[np.argsort(key, kind="stable")], dtype=np.int64)


@njit(cache=True, fastmath=True)
def _cost_volume(src, dst, init_u, init_v, offs, trunc):
    h, w, d = src.shape
    n_lab = offs.shape[0]
    out = np.empty((h, w, n_lab), np.float32)
    for i in range(h):
        for j in range(w):
            for lab in range(n_lab):
                y = i + init_v[i, j] + offs[lab, 1]
                x = j + init_u[i, j] + offs[lab, 0]
                if y < 0 or y >= h or x < 0 or x >= w:
                    out[i, j, lab] = trunc
                else:
                    s = np.float32(0.0)
                    for k in range(d):
                        s += abs(src[i, j, k] - dst[y, x, k])
                    out[i, j, lab] = s if s < trunc else trunc
    return out


@njit(cache=True)
def _icm(cost, lab, init_u, init_v, offs, lam, sweeps):
    h, w, n_lab = cost.shape
    r = 0
    for k in range(n_lab):
        r = max(r, abs(offs[k, 0]), abs(offs[k, 1]))
    u = init_u + offs[lab, 0]
    v = init_v + offs[lab, 1]
    # the smoothness term splits into u and v parts; tabulate both per candidate offset
    su = np.empty(2 * r + 1)
    sv = np.empty(2 * r + 1)
    for sweep in range(sweeps):
        changed = 0
        for ii in range(h):
            i = ii if sweep % 2 == 0 else h - 1 - ii
            for jj in range(w):
                j = jj if sweep % 2 == 0 else w - 1 - jj
                for t in range(2 * r + 1):
                    cu = init_u[i, j] + t - r
                    cv = init_v[i, j] + t - r
                    a = 0.0
                    b = 0.0
                    if i > 0:
                        a += abs(cu - u[i - 1, j])
                        b += abs(cv - v[i - 1, j])
                    if i < h - 1:
                        a += abs(cu - u[i + 1, j])
                        b += abs(cv - v[i + 1, j])
                    if j > 0:
                        a += abs(cu - u[i, j - 1])
                        b += abs(cv - v[i, j - 1])
                    if j < w - 1:
                        a += abs(cu - u[i, j + 1])
                        b += abs(cv - v[i, j + 1])
                    su[t] = a
                    sv[t] = b
                best = np.inf
                best_lab = lab[i, j]
                for k in range(-1, n_lab):
                    cand = best_lab if k < 0 else k
                    e = np.float64(cost[i, j, cand]) + lam * (su[offs[cand, 0] + r] + sv[offs[cand, 1] + r])
                    if e < best:
                        best = e
                        best_lab = cand
                if best_lab != lab[i, j]:
                    lab[i, j] = best_lab
                    u[i, j] = init_u[i, j] + offs[best_lab, 0]
                    v[i, j] = init_v[i, j] + offs[best_lab, 1]
                    changed += 1
        if changed == 0:
            break
    return lab


@njit(cache=True)
def _smoothness(u, v):
    h, w = u.shape
    s = 0.0
    for i in range(h):
        for j in range(w):
            if i + 1 < h:
                s += abs(u[i + 1, j] - u[i, j]) + abs(v[i + 1, j] - v[i, j])
            if j + 1 < w:
                s += abs(u[i, j + 1] - u[i, j]) + abs(v[i, j + 1] - v[i, j])
    return s


def _labelled_energy(cost, lab, u, v, lam) -> float:
    data = np.take_along_axis(cost, lab[..., None], axis=2).astype(np.float64).sum()
    return float(data + lam * _smoothness(u, v))


def _data_energy(src, dst, u, v, trunc) -> float:
    zero = np.zeros((1, 2), dtype=np.int64)
    cost = _cost_volume(src, dst, u, v, zero, np.float32(trunc))
    return float(cost.astype(np.float64).sum())


def flow_energy(src: DescriptorField, dst: DescriptorField, flow: FlowField,
                params: FlowParams = FlowParams()) -> float:
    """Energy of an integer flow field at full resolution."""
    u = np.rint(flow.u).astype(np.int64)
    v = np.rint(flow.v).astype(np.int64)
    s = np.ascontiguousarray(src.data, dtype=np.float32)
    d = np.ascontiguousarray(dst.data, dtype=np.float32)
    return _data_energy(s, d, u, v, params.truncation) + params.smoothness_weight * _smoothness(u, v)


def _upsample(u: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    up = np.repeat(np.repeat(u, 2, axis=0), 2, axis=1)[:shape[0], :shape[1]]
    return np.ascontiguousarray(2 * up)


def _solve_level(src, dst, init_u, init_v, offs, params: FlowParams):
    lam = float(params.smoothness_weight)
    cost = _cost_volume(src, dst, init_u, init_v, offs, np.float32(params.truncation))
    lab = np.ascontiguousarray(np.argmin(cost, axis=2).astype(np.int64))
    lab = _icm(cost, lab, init_u, init_v, offs, lam, params.icm_sweeps)
    u = init_u + offs[lab, 0]
    v = init_v + offs[lab, 1]
    best = (_labelled_energy(cost, lab, u, v, lam), u, v)

    # offs[0] is the zero offset: keeping the starting field is always a candidate
    keep = np.zeros_like(lab)
    e_keep = _labelled_energy(cost, keep, init_u, init_v, lam)
    if e_keep <= best[0]:
        best = (e_keep, init_u, init_v)

    if np.all(init_u == init_u.flat[0]) and np.all(init_v == init_v.flat[0]):
        totals = cost.astype(np.float64).sum(axis=(0, 1))
        c = int(np.argmin(totals))
        if totals[c] < best[0]:
            cu = np.full_like(init_u, init_u.flat[0] + offs[c, 0])
            cv = np.full_like(init_v, init_v.flat[0] + offs[c, 1])
            best = (float(totals[c]), cu, cv)
    return best


def estimate_flow(src: DescriptorField, dst: DescriptorField,
                  params: FlowParams = FlowParams()) -> FlowField:
    """Integer flow ``w`` such that ``src(p)`` matches ``dst(p + w(p))``."""
    if src.data.shape != dst.data.shape:
        raise ShapeError(f"descriptor fields differ: {src.data.shape} vs {dst.data.shape}")
    offs = window_offsets(params.search_radius)
    pyr_s = src.pyramid(params.levels)
    pyr_d = dst.pyramid(params.levels)
    u = v = None
    energy = None
    for lev in range(params.levels - 1, -1, -1):
        s, d = pyr_s[lev], pyr_d[lev]
        shape = s.shape[:2]
        if u is None:
            u = np.zeros(shape, dtype=np.int64)
            v = np.zeros(shape, dtype=np.int64)
        else:
            u, v = _upsample(u, shape), _upsample(v, shape)
        energy, u, v = _solve_level(s, d, u, v, offs, params)

    s, d = pyr_s[0], pyr_d[0]
    zero = np.zeros_like(u)
    if _data_energy(s, d, zero, zero, params.truncation) <= energy:
        u = v = zero
    return FlowField(u.astype(np.float64), v.astype(np.float64))


def warp(frame: np.ndarray, flow: FlowField) -> np.ndarray:
    """Backward warp: ``out(p) = frame(p + w(p))``, bilinear with clamped borders."""
    frame = check_image(frame)
    h, w = frame.shape[:2]
    if flow.u.shape != (h, w):
        raise ShapeError(f"flow {flow.u.shape} does not match frame {(h, w)}")
    rows = np.arange(h, dtype=np.float64)[:, None] + flow.v
    cols = np.arange(w, dtype=np.float64)[None, :] + flow.u
    return np.clip(sample_bilinear(frame, rows, cols), 0.0, 1.0)
