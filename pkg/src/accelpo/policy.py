"""Tabular policies on the product of action simplices.

Softmax policies carry their logits ``z`` next to the probabilities;
direct policies are plain probability tables. Gradients are returned in
logit space with the same ``[s, a]`` layout as the policy.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .mdp import Rollout, as_probs

logger = logging.getLogger(__name__)


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass(frozen=True, eq=False)
class TabularPolicy:
    logits: np.ndarray
    probs: np.ndarray

    @classmethod
    def from_logits(cls, logits) -> "TabularPolicy":
        logits = np.array(logits, dtype=float)
        if logits.ndim != 2:
            raise ValueError(f"logits must be a 2-d [state, action] table, got {logits.shape}")
        logits = logits - logits.max(axis=1, keepdims=True)
        return cls(logits, softmax(logits))

    @classmethod
    def from_probs(cls, probs) -> "TabularPolicy":
        """Logits are log-probabilities; zero entries become -inf."""
        with np.errstate(divide="ignore"):
            logits = np.log(np.asarray(probs, dtype=float))
        return cls(logits - logits.max(axis=1, keepdims=True), np.array(probs, dtype=float))

    @classmethod
    def uniform(cls, n_states: int, n_actions: int) -> "TabularPolicy":
        return cls.from_logits(np.zeros((n_states, n_actions)))

    @property
    def shape(self):
        return self.probs.shape


@dataclass(frozen=True, eq=False)
class DirectPolicy:
    probs: np.ndarray

    def __post_init__(self):
        p = np.array(self.probs, dtype=float)
        if p.ndim != 2 or np.any(p < -1e-12) or np.max(np.abs(p.sum(axis=1) - 1.0)) > 1e-9:
            raise ValueError("direct policy rows must lie on the simplex")
        object.__setattr__(self, "probs", p)


def mirror_step(policy: TabularPolicy, U, alpha: float) -> TabularPolicy:
    """Closed-form KL-regularized improvement: pi' proportional to pi * exp(alpha U).

    ``U`` is centered per row before use, so adding a per-state constant
    to ``U`` does not change the result.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    U = np.asarray(U, dtype=float)
    centered = U - U.max(axis=1, keepdims=True)
    return TabularPolicy.from_logits(policy.logits + alpha * centered)


def euclidean_project(v) -> np.ndarray:
    """Euclidean projection onto the probability simplex (sort and threshold).

    A 2-d input is projected row by row.
    """
    v = np.asarray(v, dtype=float)
    if v.ndim == 1:
        return euclidean_project(v[None, :])[0]
    u = -np.sort(-v, axis=1)
    css = np.cumsum(u, axis=1) - 1.0
    k = np.arange(1, v.shape[1] + 1)
    rho = np.count_nonzero(u - css / k > 0, axis=1)
    theta = css[np.arange(v.shape[0]), rho - 1] / rho
    return np.maximum(v - theta[:, None], 0.0)


def projected_step(policy, U, alpha: float) -> DirectPolicy:
    """Projected gradient ascent for the direct parametrization."""
    return DirectPolicy(euclidean_project(as_probs(policy) + alpha * np.asarray(U)))


def kl_rows(p, q) -> np.ndarray:
    """Per-state KL(p(.|s) || q(.|s)); inf where q misses p's support."""
    p, q = as_probs(p), as_probs(q)
    out = np.zeros(p.shape[0])
    pos = p > 0
    bad = pos & (q <= 0)
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(pos, p * (np.log(np.where(pos, p, 1.0)) - np.log(np.where(q > 0, q, 1.0))), 0.0)
    out[:] = terms.sum(axis=1)
    out[bad.any(axis=1)] = np.inf
    return out


def weighted_kl(p, q, d) -> float:
    """sum_s d(s) KL(p(.|s) || q(.|s)).

    Returns ``inf`` (and logs the offending states) when ``q`` assigns
    zero mass to an action ``p`` takes in a state with positive weight.
    """
    d = np.asarray(d, dtype=float)
    rows = kl_rows(p, q)
    weighted = d > 0
    bad = np.flatnonzero(weighted & np.isinf(rows))
    if bad.size:
        logger.warning("KL support violation at states %s", bad.tolist())
        return float("inf")
    return float(np.sum(d[weighted] * rows[weighted]))


def soft_pi_mix(pi_t, pi_plus, alpha: float) -> DirectPolicy:
    if not 0.0 < alpha <= 1.0:
        raise ValueError("mixing step must lie in (0, 1]")
    if alpha == 1.0:
        return DirectPolicy(as_probs(pi_plus))
    return DirectPolicy((1.0 - alpha) * as_probs(pi_t) + alpha * as_probs(pi_plus))


def softmax_policy_gradient(policy, Q, d) -> np.ndarray:
    """d(s) pi(a|s) (Q(s, a) - sum_b pi(b|s) Q(s, b)).

    With ``d`` the unnormalized discounted occupancy this is exactly the
    gradient of ``performance`` w.r.t. the logits.
    """
    probs = as_probs(policy)
    Q = np.asarray(Q, dtype=float)
    adv = Q - np.sum(probs * Q, axis=1, keepdims=True)
    return np.asarray(d, dtype=float)[:, None] * probs * adv


def score_function_terms(probs: np.ndarray, states, actions, U: np.ndarray) -> np.ndarray:
    """Per-sample terms (e_A - pi(.|S)) * (U(S, A) - E_pi U(S, .)), shape (n, |A|)."""
    p = probs[states]
    u = U[states]
    adv = u[np.arange(len(states)), actions] - np.sum(p * u, axis=1)
    terms = -p * adv[:, None]
    terms[np.arange(len(states)), actions] += adv
    return terms


def sampled_policy_gradient(rollout: Rollout, policy, U) -> np.ndarray:
    """(1/n) sum_i grad log pi(A_i|S_i) (U(S_i, A_i) - E_pi U(S_i, .)) for a tabular softmax."""
    probs = as_probs(policy)
    U = np.asarray(U, dtype=float)
    n = len(rollout)
    if n == 0:
        raise ValueError("empty rollout")
    grad = np.zeros_like(probs)
    terms = score_function_terms(probs, rollout.states, rollout.actions, U)
    np.add.at(grad, rollout.states, terms / n)
    return grad
