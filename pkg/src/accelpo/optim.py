"""Elementwise optimizers over parameter tables.

``sgd_step`` ascends (params + lr * grad). ``adam_step`` returns a delta
to be *subtracted* for minimization; callers pick the sign.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np


def sgd_step(params, grad, lr: float) -> np.ndarray:
    return np.asarray(params, dtype=float) + lr * np.asarray(grad, dtype=float)


@dataclass(frozen=True, eq=False)
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros(cls, shape, lr: float = 1e-3, beta1: float = 0.9, beta2: float = 0.999,
              eps: float = 1e-8) -> "AdamState":
        return cls(np.zeros(shape), np.zeros(shape), 0, lr, beta1, beta2, eps)


def adam_step(state: AdamState, grad):
    """Bias-corrected Adam; returns ``(delta, new_state)`` with delta = lr * m_hat / (sqrt(v_hat) + eps)."""
    g = np.asarray(grad, dtype=float)
    if g.shape != state.m.shape:
        raise ValueError(f"gradient shape {g.shape} does not match state {state.m.shape}")
    t = state.t + 1
    m = state.beta1 * state.m + (1.0 - state.beta1) * g
    v = state.beta2 * state.v + (1.0 - state.beta2) * g * g
    m_hat = m / (1.0 - state.beta1 ** t)
    v_hat = v / (1.0 - state.beta2 ** t)
    delta = state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return delta, replace(state, m=m, v=v, t=t)
