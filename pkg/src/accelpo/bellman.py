"""Bellman operators on Q-tables and h-step search values.

Search is exhaustive: ``search_values`` applies the exact operator ``h``
times with the MDP as the model, so depth truncation is the only
approximation.
"""
from __future__ import annotations

import numpy as np

from .mdp import TabularMdp, as_probs

EVAL = "eval"
GREEDY = "greedy"
SEARCH_MODES = (EVAL, GREEDY)


def _backup(mdp: TabularMdp, v_next: np.ndarray) -> np.ndarray:
    return mdp.rewards + mdp.discount * (mdp.flat_transitions @ v_next).reshape(mdp.rewards.shape)


def t_pi(mdp: TabularMdp, policy, Q) -> np.ndarray:
    """(T_pi Q)(s, a) = r(s, a) + gamma sum_s' P(s'|s, a) sum_a' pi(a'|s') Q(s', a')."""
    return _backup(mdp, np.einsum("sa,sa->s", as_probs(policy), Q))


def t_opt(mdp: TabularMdp, Q) -> np.ndarray:
    return _backup(mdp, np.max(Q, axis=1))


def opi_eval_step(Q, target, lam: float) -> np.ndarray:
    """Relaxed evaluation Q - lam (Q - target); ``target`` is normally T Q."""
    if not 0.0 < lam <= 1.0:
        raise ValueError("lambda must lie in (0, 1]")
    target = np.asarray(target, dtype=float)
    if lam == 1.0:
        return target.copy()
    Q = np.asarray(Q, dtype=float)
    return Q - lam * (Q - target)


def search_values(mdp: TabularMdp, q_leaf, h: int, mode: str = EVAL, policy=None) -> np.ndarray:
    """U = T_pi^h Q_leaf (``eval``) or T^h Q_leaf (``greedy``)."""
    if h < 0:
        raise ValueError("horizon must be >= 0")
    if mode not in SEARCH_MODES:
        raise ValueError(f"unknown search mode {mode!r}")
    if mode == EVAL and policy is None:
        raise ValueError("eval-mode search needs a tree policy")
    U = np.array(q_leaf, dtype=float)
    if mode == EVAL:
        probs = as_probs(policy)
        for _ in range(h):
            U = t_pi(mdp, probs, U)
    else:
        for _ in range(h):
            U = t_opt(mdp, U)
    return U


def search_advantage(U, policy) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    return U - np.sum(as_probs(policy) * U, axis=1, keepdims=True)


def lookahead_recursion(mdp: TabularMdp, policy, Q, h: int) -> np.ndarray:
    """U^(h) = Q_next + gamma E_pi[U^(h-1) - Q] with Q_next = T_pi Q, U^(0) = Q.

    Expectation is over the model's next state and the policy's next action.
    """
    if h < 1:
        raise ValueError("recursion needs h >= 1")
    probs = as_probs(policy)
    Q = np.asarray(Q, dtype=float)
    q_next = t_pi(mdp, probs, Q)
    U = Q
    for _ in range(h):
        U = q_next + mdp.discount * (mdp.flat_transitions @ np.sum(probs * (U - Q), axis=1)).reshape(Q.shape)
    return U


def lookahead_recursion_check(mdp: TabularMdp, policy, Q, h: int, atol: float = 1e-10) -> bool:
    direct = search_values(mdp, Q, h, EVAL, policy)
    recursive = lookahead_recursion(mdp, policy, Q, h)
    return bool(np.max(np.abs(direct - recursive)) <= atol)
