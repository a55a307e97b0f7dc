"""Adam with bias correction (defaults beta1=0.9, beta2=0.999, eps=1e-8)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .engine import ShapeError, Tensor


@dataclass
class AdamState:
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict[str, Tensor], grads: dict[str, np.ndarray], state: AdamState) -> AdamState:
    """Apply one Adam update.

    Each parameter's ``data`` is replaced by a fresh array; parameters without
    an entry in ``grads`` are treated as having zero gradient.
    """
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if np.shape(g) != params[name].shape:
            raise ShapeError(f"{name}: gradient shape {np.shape(g)} vs parameter shape {params[name].shape}")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            v = np.zeros_like(p.data)
        else:
            v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name] = m
        state.v[name] = v
        update = state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        p.data = (p.data - update).astype(p.dtype)
    return state
