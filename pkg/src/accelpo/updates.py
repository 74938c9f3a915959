"""Auto-regressive update rules u_t for accelerated policy improvement.

Each rule maps a gradient estimate (and the rule's memory) to the update
``u_t`` that is added to the logits, ``z_{t+1/2} = z_t + alpha u_t``.
States are immutable; every step returns a fresh one.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .policy import TabularPolicy, mirror_step


@dataclass(frozen=True, eq=False)
class UpdateState:
    u_prev: np.ndarray
    g_prev: np.ndarray
    z_prev: np.ndarray | None = None
    z_half_prev: np.ndarray | None = None
    mu: float = 0.0
    beta: float = 1.0
    alpha: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.mu < 1.0:
            raise ValueError("momentum decay must lie in [0, 1)")
        if self.beta <= 0 or self.alpha <= 0:
            raise ValueError("step sizes must be positive")
        if np.shape(self.u_prev) != np.shape(self.g_prev):
            raise ValueError("u_prev and g_prev must share a shape")

    @classmethod
    def fresh(cls, shape, mu: float = 0.0, beta: float = 1.0, alpha: float = 1.0) -> "UpdateState":
        return cls(np.zeros(shape), np.zeros(shape), mu=mu, beta=beta, alpha=alpha)


def _advance(state: UpdateState, u, g) -> UpdateState:
    return replace(state, u_prev=np.array(u, dtype=float), g_prev=np.array(g, dtype=float))


def vanilla_update(state: UpdateState, g_hat):
    u = np.array(g_hat, dtype=float)
    return u, _advance(state, u, g_hat)


def momentum_update(state: UpdateState, g_hat):
    """Heavy ball: u_t = mu u_{t-1} + beta g_t."""
    u = state.mu * state.u_prev + state.beta * np.asarray(g_hat, dtype=float)
    return u, _advance(state, u, g_hat)


def optimistic_update(state: UpdateState, g_next, g_curr):
    """u_t = beta g_{t+1} + mu (u_{t-1} - beta g_t); the stored prediction becomes g_{t+1}."""
    g_next = np.asarray(g_next, dtype=float)
    u = state.beta * g_next + state.mu * (state.u_prev - state.beta * np.asarray(g_curr, dtype=float))
    return u, _advance(state, u, g_next)


def extragrad_half_step(z, u_prev, alpha: float) -> TabularPolicy:
    """Half-step proposal from the previous update, pi_{t+1/2} from z_t + alpha u_{t-1}."""
    return mirror_step(TabularPolicy.from_logits(z), u_prev, alpha)


def extragrad_update(state: UpdateState, g_half, g_curr):
    """Optimistic rule with the prediction taken at the half-step proposal."""
    return optimistic_update(state, g_half, g_curr)


def apply_update(z, u, alpha: float) -> np.ndarray:
    """Dual-space step z_{t+1/2} = z_t + alpha u_t."""
    return np.asarray(z, dtype=float) + alpha * np.asarray(u, dtype=float)


def record_logits(state: UpdateState, z, z_half) -> UpdateState:
    return replace(state, z_prev=np.array(z, dtype=float), z_half_prev=np.array(z_half, dtype=float))


def z_recursion(z, z_prev, g_next, g_curr, alpha: float, beta: float, mu: float) -> np.ndarray:
    """Logit-space form of the rules above, no u memory needed.

    z_{t+1} = z_t + mu (z_t - z_{t-1}) + alpha beta (g_{t+1} - mu g_t).
    This is the optimistic rule; heavy-ball momentum is the case
    ``g_curr = 0`` with ``g_next`` the current gradient, and ``mu = 0``
    gives the vanilla step.
    """
    z = np.asarray(z, dtype=float)
    return (z + mu * (z - np.asarray(z_prev, dtype=float))
            + alpha * beta * (np.asarray(g_next, dtype=float) - mu * np.asarray(g_curr, dtype=float)))
