"""Global-norm gradient clipping and Adam with the amsgrad correction."""

from __future__ import annotations

import math
from collections import OrderedDict
from dataclasses import dataclass, field

import numpy as np

from .model import StcnParameters


def global_norm(grads: StcnParameters) -> float:
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.arrays.values()))


def clip_gradients(grads: StcnParameters, max_norm: float = 1.0) -> StcnParameters:
    """Rescale all gradients together when their joint L2 norm exceeds ``max_norm``."""
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return StcnParameters(OrderedDict((k, g * scale) for k, g in grads.arrays.items()))


@dataclass
class OptimState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)
    v_max: dict = field(default_factory=dict)


def adam_amsgrad_step(state: OptimState, params: StcnParameters,
                      grads: StcnParameters) -> tuple[StcnParameters, OptimState]:
    """One update; ``params`` is left untouched and a new set is returned."""
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** t
    c2 = 1.0 - b2 ** t
    out = OrderedDict()
    for name, p in params.arrays.items():
        g = grads.arrays[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
            state.v_max[name] = np.zeros_like(p)
        v, vmax = state.v[name], state.v_max[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        np.maximum(vmax, v, out=vmax)
        out[name] = p - state.lr * (m / c1) / (np.sqrt(vmax / c2) + state.eps)
    return StcnParameters(out), state
