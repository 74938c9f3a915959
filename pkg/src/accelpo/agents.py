"""Online tabular agents and their regret traces.

All agents share one loop: sample ``n`` steps from the current softmax
policy, update, record J(pi*) - J(pi_t) for every environment step. An
episode ends on a terminal transition of the MDP (goal reached); runs
stop once ``cfg.episodes`` episodes have finished or ``cfg.max_steps``
steps were taken.

Parameters are plain tables: ``theta`` (policy logits), ``w`` (critic
Q-table), ``eta`` (meta-learned update field U_eta).
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, fields, replace
from typing import Callable

import numpy as np

from . import bellman
from .mdp import Rollout, RolloutSampler, TabularMdp, exact_q, exact_v, performance, value_iteration
from .optim import AdamState, adam_step
from .policy import TabularPolicy, mirror_step, sampled_policy_gradient, softmax
from .updates import (UpdateState, extragrad_half_step, extragrad_update, momentum_update,
                      optimistic_update, vanilla_update)

ALGORITHMS = ("pg", "ac", "fws", "opg_expert", "opg_pred")
TARGET_KINDS = ("geometric", "parametric")
META_OPTIMIZERS = ("adam", "sgd")


class ConfigError(ValueError):
    pass


class TargetSupportError(RuntimeError):
    """Meta loss became infinite: the target gives zero mass where the learner acts."""


@dataclass(frozen=True)
class RunConfig:
    algorithm: str = "pg"
    xi: float = 0.5          # policy step size
    zeta: float = 0.1        # critic step size
    nu: float = 0.01         # meta step size
    alpha: float = 1.0       # geometric target step size
    h: int = 1               # search horizon / target depth / meta period
    n: int = 2               # rollout length
    episodes: int = 500
    seed: int = 0
    search_mode: str = "eval"
    target_kind: str = "geometric"
    meta_optimizer: str = "adam"
    recompute_target: bool = False
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_steps: int = 2_000_000

    def validate(self) -> "RunConfig":
        errors = []
        if self.algorithm not in ALGORITHMS:
            errors.append(f"unknown algorithm {self.algorithm!r} (expected one of {ALGORITHMS})")
        if self.search_mode not in bellman.SEARCH_MODES:
            errors.append(f"unknown search_mode {self.search_mode!r}")
        if self.target_kind not in TARGET_KINDS:
            errors.append(f"unknown target_kind {self.target_kind!r}")
        if self.meta_optimizer not in META_OPTIMIZERS:
            errors.append(f"unknown meta_optimizer {self.meta_optimizer!r}")
        if self.xi <= 0:
            errors.append("xi must be > 0")
        if self.algorithm in ("ac", "fws", "opg_pred") and self.zeta < 0:
            errors.append("zeta must be >= 0")
        if self.algorithm.startswith("opg"):
            if self.nu <= 0:
                errors.append("nu must be > 0")
            if self.h < 1:
                errors.append("h must be >= 1 for meta-gradient agents")
            if self.target_kind == "geometric" and self.alpha <= 0:
                errors.append("alpha must be > 0")
        if self.h < 0:
            errors.append("h must be >= 0")
        if self.n < 1:
            errors.append("n must be >= 1")
        if self.episodes < 1 or self.max_steps < 1:
            errors.append("episodes and max_steps must be >= 1")
        if errors:
            raise ConfigError("; ".join(errors))
        return self

    @classmethod
    def keys(cls) -> tuple[str, ...]:
        return tuple(f.name for f in fields(cls))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class RegretTrace:
    algorithm: str
    seed: int
    regret: np.ndarray            # per environment step
    episode: np.ndarray           # 1-based episode index of each step
    episode_end_steps: np.ndarray  # 0-based step index at which each episode ended
    j_star: float = float("nan")
    truncated: bool = False

    @property
    def cum_regret(self) -> np.ndarray:
        return np.cumsum(self.regret)

    @property
    def n_steps(self) -> int:
        return len(self.regret)

    @property
    def n_episodes(self) -> int:
        return len(self.episode_end_steps)

    @property
    def episode_regret(self) -> np.ndarray:
        return self.regret[self.episode_end_steps]

    @property
    def final_regret(self) -> float:
        return float(self.regret[-1])

    @property
    def total_regret(self) -> float:
        return float(np.sum(self.regret))

    def same_as(self, other: "RegretTrace") -> bool:
        return (self.algorithm == other.algorithm and self.seed == other.seed
                and np.array_equal(self.regret, other.regret)
                and np.array_equal(self.episode, other.episode)
                and np.array_equal(self.episode_end_steps, other.episode_end_steps))


@dataclass
class MetaLearner:
    eta: np.ndarray
    opt: AdamState | None = None


class MetaBuffer:
    """FIFO of the most recent rollouts used for one meta update."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._items: deque[Rollout] = deque(maxlen=capacity)

    def push(self, rollout: Rollout) -> None:
        self._items.append(rollout)

    def full(self) -> bool:
        return len(self._items) == self.capacity

    def clear(self) -> None:
        self._items.clear()

    def __iter__(self):
        return iter(self._items)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i) -> Rollout:
        return self._items[i]


# ------------------------------------------------------------ loop glue


class _Evaluator:
    """Softmax probabilities and exact state values of the most recent logits."""

    def __init__(self, mdp: TabularMdp):
        self.mdp = mdp
        self._theta = None
        self._probs = self._v = None

    def __call__(self, theta: np.ndarray):
        if theta is not self._theta:
            self._theta = theta
            self._probs = softmax(theta)
            self._v = exact_v(self.mdp, self._probs)
        return self._probs, self._v

    def q(self, theta: np.ndarray) -> np.ndarray:
        _, v = self(theta)
        return self.mdp.rewards + self.mdp.discount * (self.mdp.flat_transitions @ v).reshape(theta.shape)


class _Recorder:
    def __init__(self, mdp: TabularMdp, cfg: RunConfig):
        self.cfg = cfg
        _, _, self.j_star = value_iteration(mdp, tol=1e-10)
        self.rho = mdp.initial_dist
        self.terminal = mdp.terminal
        self.regret: list[float] = []
        self.episode: list[int] = []
        self.ends: list[int] = []
        self.current = math.nan

    def set_values(self, v: np.ndarray) -> None:
        self.current = self.j_star - float(self.rho @ v)

    def record(self, rollout: Rollout) -> Rollout | None:
        """Log the rollout's steps; returns ``None`` once the budget is spent."""
        for i in range(len(rollout)):
            self.regret.append(self.current)
            self.episode.append(len(self.ends) + 1)
            if self.terminal is not None and self.terminal[rollout.states[i], rollout.actions[i]]:
                self.ends.append(len(self.regret) - 1)
                if len(self.ends) >= self.cfg.episodes:
                    return None
            if len(self.regret) >= self.cfg.max_steps:
                return None
        return rollout

    def trace(self) -> RegretTrace:
        truncated = len(self.ends) < self.cfg.episodes
        return RegretTrace(self.cfg.algorithm, self.cfg.seed, np.array(self.regret),
                           np.array(self.episode, dtype=np.int64), np.array(self.ends, dtype=np.int64),
                           self.j_star, truncated)


def _loop(mdp: TabularMdp, cfg: RunConfig, rng, update, evaluate: _Evaluator | None = None):
    """Generic online loop; ``update(theta, probs, rollout)`` returns the next logits."""
    cfg.validate()
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    evaluate = evaluate or _Evaluator(mdp)
    rec = _Recorder(mdp, cfg)
    sampler = RolloutSampler(mdp, rng)
    theta = np.zeros((mdp.n_states, mdp.n_actions))
    while True:
        probs, v = evaluate(theta)
        rec.set_values(v)
        rollout = rec.record(sampler.sample(probs, cfg.n))
        if rollout is None:
            return rec.trace()
        theta = update(theta, probs, rollout)


def _pg_step(theta, probs, rollout, U, xi):
    return theta + xi * sampled_policy_gradient(rollout, probs, U)


def td_step(mdp, w, probs, rollout, bootstrap, zeta):
    """Semi-gradient expected-SARSA step toward R + gamma E_pi[bootstrap(S', .)]."""
    s, a = rollout.states, rollout.actions
    v_next = np.sum(probs[rollout.next_states] * bootstrap[rollout.next_states], axis=1)
    delta = rollout.rewards + mdp.discount * v_next - w[s, a]
    w = w.copy()
    np.add.at(w, (s, a), zeta * delta / len(rollout))
    return w


# -------------------------------------------------------------- agents


def run_pg(mdp: TabularMdp, cfg: RunConfig, rng=None) -> RegretTrace:
    """Score-function policy gradient with the exact critic Q_pi_t."""

    evaluate = _Evaluator(mdp)

    def update(theta, probs, rollout):
        return _pg_step(theta, probs, rollout, evaluate.q(theta), cfg.xi)

    return _loop(mdp, cfg, rng, update, evaluate)


def run_fws(mdp: TabularMdp, cfg: RunConfig, rng=None) -> RegretTrace:
    """Actor-critic whose gradient critic is the h-step search value U_t."""
    w = np.zeros((mdp.n_states, mdp.n_actions))

    def update(theta, probs, rollout):
        nonlocal w
        U = bellman.search_values(mdp, w, cfg.h, cfg.search_mode, probs)
        theta = _pg_step(theta, probs, rollout, U, cfg.xi)
        w = td_step(mdp, w, probs, rollout, U, cfg.zeta)
        return theta

    return _loop(mdp, cfg, rng, update)


def run_ac(mdp: TabularMdp, cfg: RunConfig, rng=None) -> RegretTrace:
    """TD(0) actor-critic; the h = 0 case of forward search."""
    return run_fws(mdp, replace(cfg, h=0), rng)


def meta_gradient(eta, theta_t, xi: float, target, batch, update_rollout: Rollout | None = None) -> np.ndarray:
    """Gradient w.r.t. ``eta`` of the mean KL(pi_{theta_{t+1}}(S_j) || target(S_j)).

    ``theta_{t+1}(eta) = theta_t + xi * u_eta`` where u_eta is the sampled
    score-function update built from ``eta`` on ``update_rollout`` (by
    default the newest rollout in ``batch``). States ``S_j`` range over
    every step of every rollout in ``batch``; the target is a constant.
    """
    eta = np.asarray(eta, dtype=float)
    theta_t = np.asarray(theta_t, dtype=float)
    rollouts = list(batch)
    if update_rollout is None:
        update_rollout = rollouts[-1]
    probs_t = softmax(theta_t)
    theta_next = theta_t + xi * sampled_policy_gradient(update_rollout, probs_t, eta)

    log_p = theta_next - _logsumexp(theta_next)
    log_q = _target_log_probs(target)
    p = np.exp(log_p)
    states = np.concatenate([r.states for r in rollouts])
    rows = _kl_from_logs(p, log_p, log_q, states)
    if not np.all(np.isfinite(rows)):
        raise TargetSupportError(f"infinite KL at states {np.unique(states[~np.isfinite(rows)]).tolist()}")
    weights = np.bincount(states, minlength=eta.shape[0]) / len(states)
    # d mean-KL / d theta_next, rowwise p (log p - log q - KL)
    ell = log_p - log_q
    kl_all = np.sum(np.where(p > 0, p * ell, 0.0), axis=1, keepdims=True)
    g_theta = weights[:, None] * p * (ell - kl_all)
    g_theta = np.where(weights[:, None] > 0, g_theta, 0.0)

    # chain rule through theta_next[S] += xi/n (e_A - pi_t(S)) (eta[S, A] - pi_t(S) . eta[S])
    s, a = update_rollout.states, update_rollout.actions
    n = len(update_rollout)
    score = -probs_t[s]
    score[np.arange(n), a] += 1.0
    c = np.sum(g_theta[s] * score, axis=1)
    grad = np.zeros_like(eta)
    np.add.at(grad, s, (xi / n) * c[:, None] * score)
    return grad


def meta_loss(eta, theta_t, xi: float, target, batch, update_rollout: Rollout | None = None) -> float:
    """The objective differentiated by ``meta_gradient``."""
    rollouts = list(batch)
    if update_rollout is None:
        update_rollout = rollouts[-1]
    probs_t = softmax(np.asarray(theta_t, dtype=float))
    theta_next = theta_t + xi * sampled_policy_gradient(update_rollout, probs_t, eta)
    log_p = theta_next - _logsumexp(theta_next)
    states = np.concatenate([r.states for r in rollouts])
    return float(np.mean(_kl_from_logs(np.exp(log_p), log_p, _target_log_probs(target), states)))


def _logsumexp(x):
    m = x.max(axis=1, keepdims=True)
    return m + np.log(np.sum(np.exp(x - m), axis=1, keepdims=True))


def _target_log_probs(target) -> np.ndarray:
    if isinstance(target, TabularPolicy):
        return target.logits - _logsumexp(target.logits)
    with np.errstate(divide="ignore"):
        return np.log(np.asarray(target, dtype=float))


def _kl_from_logs(p, log_p, log_q, states):
    with np.errstate(invalid="ignore"):
        terms = np.where(p[states] > 0, p[states] * (log_p[states] - log_q[states]), 0.0)
    return terms.sum(axis=1)


def make_target(kind: str, theta_next, q_target, alpha: float = 1.0, xi: float = 0.1, h: int = 1,
                batch=()) -> TabularPolicy:
    """Policy target one step (geometric) or ``h`` sampled PG steps (parametric) ahead."""
    if kind == "geometric":
        return mirror_step(TabularPolicy.from_logits(theta_next), q_target, alpha)
    if kind == "parametric":
        if h < 1:
            raise ValueError("parametric targets need h >= 1")
        rollouts = list(batch)
        if not rollouts:
            raise ValueError("parametric targets need rollouts")
        theta = np.array(theta_next, dtype=float)
        for j in range(h):
            theta = theta + xi * sampled_policy_gradient(rollouts[j % len(rollouts)], softmax(theta), q_target)
        return TabularPolicy.from_logits(theta)
    raise ValueError(f"unknown target kind {kind!r}")


def _run_opg(mdp: TabularMdp, cfg: RunConfig, rng, target_q: Callable[[np.ndarray, np.ndarray], np.ndarray],
             critic_step: bool, evaluate: _Evaluator) -> RegretTrace:
    shape = (mdp.n_states, mdp.n_actions)
    meta = MetaLearner(np.zeros(shape))
    if cfg.meta_optimizer == "adam":
        meta.opt = AdamState.zeros(shape, cfg.nu, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
    buffer = MetaBuffer(cfg.h)
    w = np.zeros(shape)

    def update(theta, probs, rollout):
        nonlocal w
        # learner consumes the meta parameters from before this meta update
        theta_next = theta + cfg.xi * sampled_policy_gradient(rollout, probs, meta.eta)
        if critic_step:
            w = td_step(mdp, w, probs, rollout, w, cfg.zeta)
        buffer.push(rollout)
        if buffer.full():
            q_next = target_q(theta_next, w)
            target = make_target(cfg.target_kind, theta_next, q_next, cfg.alpha, cfg.xi, cfg.h, buffer)
            grad = meta_gradient(meta.eta, theta, cfg.xi, target, buffer, rollout)
            if meta.opt is not None:
                delta, meta.opt = adam_step(meta.opt, grad)
                meta.eta = meta.eta - delta
            else:
                meta.eta = meta.eta - cfg.nu * grad
            buffer.clear()
        return theta_next

    return _loop(mdp, cfg, rng, update, evaluate)


def run_opg_expert(mdp: TabularMdp, cfg: RunConfig, rng=None) -> RegretTrace:
    """Meta-learned optimistic PG; targets built from the true Q of the updated policy."""
    evaluate = _Evaluator(mdp)
    return _run_opg(mdp, cfg, rng, lambda theta, w: evaluate.q(theta), False, evaluate)


def run_opg_pred(mdp: TabularMdp, cfg: RunConfig, rng=None,
                 critic_override: Callable[[np.ndarray], np.ndarray] | None = None) -> RegretTrace:
    """Meta-learned optimistic PG; targets built from a TD(0) critic Q_w.

    ``critic_override(probs)`` replaces Q_w when building targets (the TD
    critic keeps training but is unused).
    """
    evaluate = _Evaluator(mdp)
    if critic_override is None:
        target_q = lambda theta, w: w  # noqa: E731
    else:
        target_q = lambda theta, w: critic_override(evaluate(theta)[0])  # noqa: E731
    return _run_opg(mdp, cfg, rng, target_q, True, evaluate)


RUNNERS = {
    "pg": run_pg,
    "ac": run_ac,
    "fws": run_fws,
    "opg_expert": run_opg_expert,
    "opg_pred": run_opg_pred,
}


def run(mdp: TabularMdp, cfg: RunConfig, rng=None) -> RegretTrace:
    cfg.validate()
    return RUNNERS[cfg.algorithm](mdp, cfg, rng)


# ------------------------------------------------ exact accelerated loop

RULES = ("vanilla", "momentum", "optimistic", "extragrad")


def accelerated_policy_iteration(mdp: TabularMdp, rule: str = "vanilla", iterations: int = 100,
                                 alpha: float = 0.1, beta: float = 1.0, mu: float = 0.0, h: int = 1,
                                 recompute_target: bool = False) -> np.ndarray:
    """Softmax mirror ascent with exact gradient-critics Q_pi and a chosen update rule.

    ``optimistic`` predicts the next gradient with greedy h-step search on
    Q_pi_t; ``extragrad`` evaluates Q at the half-step proposal. Returns
    the regret J(pi*) - J(pi_t) for t = 0..iterations-1.
    """
    if rule not in RULES:
        raise ValueError(f"unknown rule {rule!r}")
    _, _, j_star = value_iteration(mdp, tol=1e-10)
    shape = (mdp.n_states, mdp.n_actions)
    state = UpdateState.fresh(shape, mu=mu if rule != "vanilla" else 0.0, beta=beta, alpha=alpha)
    z = np.zeros(shape)
    regret = np.empty(iterations)
    for t in range(iterations):
        probs = softmax(z)
        regret[t] = j_star - performance(mdp, probs)
        g = exact_q(mdp, probs)
        if rule == "vanilla":
            u, state = vanilla_update(state, g)
        elif rule == "momentum":
            u, state = momentum_update(state, g)
        elif rule == "optimistic":
            g_next = bellman.search_values(mdp, g, h, bellman.GREEDY)
            u, state = optimistic_update(state, g_next, g)
        else:
            half = extragrad_half_step(z, state.u_prev, alpha)
            g_half = exact_q(mdp, half)
            u, state = extragrad_update(state, g_half, g)
            if not recompute_target:
                z = half.logits
                continue
        z = TabularPolicy.from_logits(z + alpha * (u - u.max(axis=1, keepdims=True))).logits
    return regret
