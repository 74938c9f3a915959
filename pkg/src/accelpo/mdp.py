"""Finite discounted MDPs, maze construction and exact solvers.

Everything here works on dense arrays: ``transitions[s, a, s']``,
``rewards[s, a]`` and policies as ``probs[s, a]`` tables.
"""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources

import numpy as np

# up, down, left, right
MOVES = ((-1, 0), (1, 0), (0, -1), (0, 1))
MAZE_CHARS = frozenset(".#SG")
DEFAULT_GAMMA = 0.99


class MazeError(ValueError):
    """Raised for malformed ASCII maps."""


@dataclass(frozen=True, eq=False)
class TabularMdp:
    transitions: np.ndarray
    rewards: np.ndarray
    discount: float
    initial_dist: np.ndarray
    # [s, a] mask of transitions that end an episode (and restart); optional
    terminal: np.ndarray | None = None

    def __post_init__(self):
        P = np.array(self.transitions, dtype=float)
        r = np.array(self.rewards, dtype=float)
        rho = np.array(self.initial_dist, dtype=float)
        if P.ndim != 3 or P.shape[0] != P.shape[2]:
            raise ValueError(f"transitions must have shape (S, A, S), got {P.shape}")
        if r.shape != P.shape[:2]:
            raise ValueError(f"rewards shape {r.shape} does not match {P.shape[:2]}")
        if rho.shape != (P.shape[0],):
            raise ValueError(f"initial_dist shape {rho.shape} does not match {P.shape[0]} states")
        if not 0.0 <= self.discount < 1.0:
            raise ValueError(f"discount must lie in [0, 1), got {self.discount}")
        if np.any(P < 0) or np.max(np.abs(P.sum(axis=2) - 1.0)) > 1e-12:
            raise ValueError("every transitions[s, a] row must be a probability vector")
        if np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-12:
            raise ValueError("initial_dist must be a probability vector")
        if not np.all(np.isfinite(r)):
            raise ValueError("rewards must be finite")
        arrays = [("transitions", P), ("rewards", r), ("initial_dist", rho)]
        if self.terminal is not None:
            term = np.array(self.terminal, dtype=bool)
            if term.shape != r.shape:
                raise ValueError(f"terminal mask shape {term.shape} does not match {r.shape}")
            arrays.append(("terminal", term))
        for name, arr in arrays:
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        object.__setattr__(self, "discount", float(self.discount))

    @cached_property
    def flat_transitions(self) -> np.ndarray:
        """transitions as an (S*A, S) matrix."""
        return self.transitions.reshape(-1, self.transitions.shape[2])

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def n_actions(self) -> int:
        return self.transitions.shape[1]

    @property
    def r_max(self) -> float:
        return float(max(self.rewards.max(), 0.0))


@dataclass(frozen=True)
class MazeSpec:
    grid: tuple[str, ...]
    start_cell: tuple[int, int]
    goal_cell: tuple[int, int]
    cells: tuple[tuple[int, int], ...] = field(repr=False)

    def state_of(self, cell: tuple[int, int]) -> int:
        return self.cells.index(cell)


@dataclass(frozen=True)
class Rollout:
    """Consecutive transitions ``(S_i, A_i, R_i, S_{i+1})``."""

    states: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray

    def __len__(self) -> int:
        return len(self.states)


def parse_maze(ascii_map: str) -> MazeSpec:
    rows = [line.rstrip("\r") for line in ascii_map.strip("\n").split("\n")]
    rows = [row for row in rows if row.strip()]
    if not rows:
        raise MazeError("empty map")
    width = len(rows[0])
    if any(len(row) != width for row in rows):
        raise MazeError("map is not rectangular")
    bad = {ch for row in rows for ch in row} - MAZE_CHARS
    if bad:
        raise MazeError(f"unexpected characters in map: {sorted(bad)}")

    def find(ch):
        hits = [(r, c) for r, row in enumerate(rows) for c, x in enumerate(row) if x == ch]
        if len(hits) != 1:
            raise MazeError(f"map must contain exactly one '{ch}', found {len(hits)}")
        return hits[0]

    start, goal = find("S"), find("G")
    cells = tuple((r, c) for r, row in enumerate(rows) for c, x in enumerate(row) if x != "#")
    free = set(cells)
    seen = {start}
    queue = deque([start])
    while queue:
        r, c = queue.popleft()
        for dr, dc in MOVES:
            nxt = (r + dr, c + dc)
            if nxt in free and nxt not in seen:
                seen.add(nxt)
                queue.append(nxt)
    unreachable = free - seen
    if unreachable:
        what = "goal" if goal in unreachable else "cells"
        raise MazeError(f"unreachable {what} from start: {sorted(unreachable)}")
    return MazeSpec(grid=tuple(rows), start_cell=start, goal_cell=goal, cells=cells)


def maze_to_mdp(maze: MazeSpec, gamma: float = DEFAULT_GAMMA) -> TabularMdp:
    """Deterministic 4-move gridworld.

    Bumping into a wall or the border leaves the agent in place. A move
    into the goal pays 1 and lands on the start cell, so the process is
    continuing. The goal cell itself is kept as a state (it is never
    entered); all of its actions restart at the start cell with reward 0.
    """
    index = {cell: i for i, cell in enumerate(maze.cells)}
    n = len(maze.cells)
    P = np.zeros((n, len(MOVES), n))
    r = np.zeros((n, len(MOVES)))
    term = np.zeros((n, len(MOVES)), dtype=bool)
    s0 = index[maze.start_cell]
    for cell, s in index.items():
        for a, (dr, dc) in enumerate(MOVES):
            if cell == maze.goal_cell:
                P[s, a, s0] = 1.0
                continue
            nxt = (cell[0] + dr, cell[1] + dc)
            if nxt not in index:
                nxt = cell
            if nxt == maze.goal_cell:
                P[s, a, s0] = 1.0
                r[s, a] = 1.0
                term[s, a] = True
            else:
                P[s, a, index[nxt]] = 1.0
    rho = np.zeros(n)
    rho[s0] = 1.0
    return TabularMdp(P, r, gamma, rho, term)


def load_maze(ascii_map: str, gamma: float = DEFAULT_GAMMA) -> TabularMdp:
    return maze_to_mdp(parse_maze(ascii_map), gamma)


def default_map() -> str:
    return resources.files("accelpo").joinpath("data/default_maze.txt").read_text(encoding="utf-8")


def default_maze(gamma: float = DEFAULT_GAMMA) -> TabularMdp:
    return load_maze(default_map(), gamma)


# ---------------------------------------------------------------- solvers


def as_probs(policy) -> np.ndarray:
    """Accept a probability table or any object with a ``probs`` attribute."""
    if type(policy) is np.ndarray and policy.dtype == np.float64:
        return policy
    return np.asarray(getattr(policy, "probs", policy), dtype=float)


def policy_transition(mdp: TabularMdp, probs) -> np.ndarray:
    """State-to-state kernel P_pi[s, s']."""
    probs = as_probs(probs)
    return np.einsum("sa,sat->st", probs, mdp.transitions)


def exact_v(mdp: TabularMdp, probs) -> np.ndarray:
    probs = as_probs(probs)
    P_pi = policy_transition(mdp, probs)
    r_pi = np.einsum("sa,sa->s", probs, mdp.rewards)
    return np.linalg.solve(np.eye(mdp.n_states) - mdp.discount * P_pi, r_pi)


def exact_q(mdp: TabularMdp, probs) -> np.ndarray:
    """Q_pi as the fixed point of the evaluation operator.

    The state-action system ``(I - gamma P Pi) Q = r`` is reduced to the
    equivalent |S| x |S| system for V_pi, then lifted back through one
    backup; both are exact.
    """
    v = exact_v(mdp, probs)
    return mdp.rewards + mdp.discount * (mdp.flat_transitions @ v).reshape(mdp.rewards.shape)


def greedy_actions(q: np.ndarray, slack: float = 0.0) -> np.ndarray:
    """Rowwise argmax; values within ``slack`` of the max tie, lowest index wins."""
    q = np.asarray(q)
    return np.argmax(q >= q.max(axis=1, keepdims=True) - slack, axis=1)


def greedy_probs(q: np.ndarray, slack: float = 0.0) -> np.ndarray:
    probs = np.zeros(np.shape(q))
    probs[np.arange(probs.shape[0]), greedy_actions(q, slack)] = 1.0
    return probs


def value_iteration(mdp: TabularMdp, tol: float = 1e-10, max_iter: int = 1_000_000):
    """Iterate the optimality operator until the Bellman residual is below ``tol``.

    Returns ``(q_star, pi_star, j_star)`` where ``pi_star`` is a one-hot
    probability table.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(max_iter):
        q_next = mdp.rewards + mdp.discount * (mdp.flat_transitions @ q.max(axis=1)).reshape(q.shape)
        residual = np.max(np.abs(q_next - q))
        q = q_next
        # residual of q_next is at most gamma * residual
        if mdp.discount * residual <= tol:
            break
    else:
        raise RuntimeError("value iteration did not converge")
    # actions within the iterate's error bound of the max count as tied
    slack = 2.0 * tol / (1.0 - mdp.discount)
    pi_star = greedy_probs(q, slack)
    return q, pi_star, performance(mdp, pi_star)


def visitation(mdp: TabularMdp, probs) -> np.ndarray:
    """Normalized discounted state occupancy d_pi from the initial distribution."""
    P_pi = policy_transition(mdp, probs)
    A = np.eye(mdp.n_states) - mdp.discount * P_pi
    d = (1.0 - mdp.discount) * np.linalg.solve(A.T, mdp.initial_dist)
    return np.clip(d, 0.0, None)


def performance(mdp: TabularMdp, probs) -> float:
    """J(pi) = E_{s ~ rho}[V_pi(s)], unnormalized."""
    return float(mdp.initial_dist @ exact_v(mdp, probs))


# --------------------------------------------------------------- sampling


def sample_action(probs_row: np.ndarray, u: float) -> int:
    """Inverse-CDF draw over ascending action index."""
    cdf = np.cumsum(probs_row)
    a = int(np.searchsorted(cdf, u * cdf[-1], side="right"))
    return min(a, len(probs_row) - 1)


class RolloutSampler:
    """Continuing trajectory generator; keeps the current state between calls."""

    def __init__(self, mdp: TabularMdp, rng: np.random.Generator, state: int | None = None):
        self.mdp = mdp
        self.rng = rng
        self._cdf = np.cumsum(mdp.transitions, axis=2)
        self._buf = np.empty(0)
        self._pos = 0
        if state is None:
            state = int(np.searchsorted(np.cumsum(mdp.initial_dist), self._uniform(), side="right"))
        self.state = min(state, mdp.n_states - 1)

    def _uniform(self) -> float:
        # uniforms are drawn in fixed-size blocks; the stream is still a pure function of the seed
        if self._pos == len(self._buf):
            self._buf = self.rng.random(4096)
            self._pos = 0
        u = self._buf[self._pos]
        self._pos += 1
        return float(u)

    def sample(self, probs, n: int) -> Rollout:
        probs = as_probs(probs)
        if n < 1:
            raise ValueError("rollout length must be >= 1")
        states = np.empty(n, dtype=np.int64)
        actions = np.empty(n, dtype=np.int64)
        rewards = np.empty(n)
        next_states = np.empty(n, dtype=np.int64)
        s = self.state
        for i in range(n):
            a = sample_action(probs[s], self._uniform())
            cdf = self._cdf[s, a]
            s_next = min(int(np.searchsorted(cdf, self._uniform() * cdf[-1], side="right")),
                         self.mdp.n_states - 1)
            states[i], actions[i], rewards[i], next_states[i] = s, a, self.mdp.rewards[s, a], s_next
            s = s_next
        self.state = s
        return Rollout(states, actions, rewards, next_states)


def sample_rollout(mdp: TabularMdp, probs, n: int, rng: np.random.Generator,
                   state: int | None = None) -> Rollout:
    return RolloutSampler(mdp, rng, state).sample(probs, n)


def random_mdp(rng: np.random.Generator, n_states: int, n_actions: int, gamma: float = 0.9,
               sparsity: float = 0.0) -> TabularMdp:
    """Random dense MDP with Dirichlet rows and uniform rewards in [0, 1).

    ``sparsity`` zeroes that fraction of next-state entries (each row keeps
    at least one).
    """
    P = rng.dirichlet(np.ones(n_states), size=(n_states, n_actions))
    if sparsity > 0:
        mask = rng.random(P.shape) >= sparsity
        mask[np.arange(n_states)[:, None], np.arange(n_actions)[None, :], rng.integers(n_states, size=(n_states, n_actions))] = True
        P = P * mask
        P /= P.sum(axis=2, keepdims=True)
    r = rng.random((n_states, n_actions))
    rho = rng.dirichlet(np.ones(n_states))
    return TabularMdp(P, r, gamma, rho)
