"""Bias-corrected Adam on name-keyed parameter dictionaries."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    state: AdamState, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]
) -> tuple[dict[str, np.ndarray], AdamState]:
    """One Adam update. Inputs are left untouched; returns new params and state.

    Parameters absent from ``grads`` keep their values and moment buffers.
    """
    unknown = set(grads) - set(params)
    if unknown:
        raise KeyError(f"gradients for unknown parameters: {sorted(unknown)}")
    step = state.step + 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**step
    c2 = 1.0 - b2**step
    new_params = dict(params)
    m = dict(state.m)
    v = dict(state.v)
    for name, g in grads.items():
        p = params[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
        g = g.astype(p.dtype, copy=False)
        m_prev = m.get(name, np.zeros_like(p))
        v_prev = v.get(name, np.zeros_like(p))
        m_new = b1 * m_prev + (1.0 - b1) * g
        v_new = b2 * v_prev + (1.0 - b2) * g * g
        m_hat = m_new / c1
        v_hat = v_new / c2
        new_params[name] = (p - state.lr * m_hat / (np.sqrt(v_hat) + state.eps)).astype(p.dtype)
        m[name] = m_new.astype(p.dtype)
        v[name] = v_new.astype(p.dtype)
    new_state = AdamState(state.lr, b1, b2, state.eps, step, m, v)
    return new_params, new_state
