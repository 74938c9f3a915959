"""Randomized invariant checks across all modules.

Every check draws its instances from a generator seeded by the audit
seed, so a verdict is reproducible. A failing check reports the violated
property and a counterexample.
"""
from __future__ import annotations

import tempfile
import time
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .. import bellman
from ..agents import (RunConfig, make_target, meta_gradient, meta_loss, run, run_ac, run_fws)
from ..mdp import (Rollout, TabularMdp, exact_q, greedy_probs, load_maze, performance, random_mdp,
                   value_iteration, visitation)
from ..optim import AdamState, adam_step, sgd_step
from ..policy import (TabularPolicy, euclidean_project, mirror_step, soft_pi_mix, softmax,
                      softmax_policy_gradient)
from ..updates import (UpdateState, momentum_update, optimistic_update, vanilla_update, z_recursion)
from .csvio import emit_trace, parse_traces
from .sweep import SweepSpec, run_sweeps

AUDIT_SEED = 20240601
SMALL_MAP = "S..\n.#.\n..G\n"


class CheckFailure(AssertionError):
    pass


def expect(cond, message: str):
    if not cond:
        raise CheckFailure(message)


def rel_err(a, b, floor: float = 1e-8) -> float:
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), floor))


def random_logits(rng, shape, scale: float = 1.0):
    return scale * rng.standard_normal(shape)


def fd_gradient(f, x, eps: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function of an array."""
    x = np.array(x, dtype=float)
    grad = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        old = x[idx]
        x[idx] = old + eps
        up = f(x)
        x[idx] = old - eps
        down = f(x)
        x[idx] = old
        grad[idx] = (up - down) / (2 * eps)
    return grad


def iterative_q(mdp: TabularMdp, probs, iters: int) -> np.ndarray:
    Q = np.zeros((mdp.n_states, mdp.n_actions))
    for _ in range(iters):
        Q = bellman.t_pi(mdp, probs, Q)
    return Q


def random_rollout(rng, n_states: int, n_actions: int, n: int) -> Rollout:
    return Rollout(rng.integers(n_states, size=n), rng.integers(n_actions, size=n),
                   rng.random(n), rng.integers(n_states, size=n))


# ------------------------------------------------------------------ mdp


def check_exact_q_vs_iteration(rng):
    for _ in range(20):
        mdp = random_mdp(rng, int(rng.integers(1, 9)), int(rng.integers(1, 4)), gamma=0.9)
        probs = softmax(random_logits(rng, (mdp.n_states, mdp.n_actions)))
        err = np.max(np.abs(exact_q(mdp, probs) - iterative_q(mdp, probs, 400)))
        expect(err <= 1e-8, f"exact_q vs iterated T_pi differ by {err:.3e} on {mdp.n_states} states")


def check_visitation_flow(rng):
    for _ in range(20):
        mdp = random_mdp(rng, int(rng.integers(1, 9)), 3, gamma=float(rng.uniform(0.5, 0.99)))
        probs = softmax(random_logits(rng, (mdp.n_states, 3)))
        d = visitation(mdp, probs)
        P_pi = np.einsum("sa,sat->st", probs, mdp.transitions)
        flow = (1 - mdp.discount) * mdp.initial_dist + mdp.discount * P_pi.T @ d
        err = np.max(np.abs(d - flow))
        expect(err <= 1e-10, f"flow identity violated by {err:.3e}")
        dual = np.sum(d * np.sum(probs * mdp.rewards, axis=1)) / (1 - mdp.discount)
        err = abs(dual - performance(mdp, probs))
        expect(err <= 1e-8, f"primal and dual performance differ by {err:.3e}")


def check_vi_dominates(rng):
    mdp = random_mdp(rng, 6, 3, gamma=0.9)
    q_star, _, _ = value_iteration(mdp, tol=1e-12)
    for _ in range(100):
        probs = softmax(random_logits(rng, (6, 3), 3.0))
        gap = np.min(q_star - exact_q(mdp, probs))
        expect(gap >= -1e-9, f"Q_pi exceeds Q* by {-gap:.3e}")


def check_gamma_one_rejected(rng):
    P = np.ones((1, 1, 1))
    try:
        TabularMdp(P, np.zeros((1, 1)), 1.0, np.ones(1))
    except ValueError:
        return
    raise CheckFailure("MDP with discount 1.0 was accepted")


# --------------------------------------------------------------- policy


def simplex_grid(steps: int) -> np.ndarray:
    """All points (i, j, steps - i - j) / steps of the 3-action simplex."""
    pts = [(i, j, steps - i - j) for i in range(steps + 1) for j in range(steps + 1 - i)]
    return np.array(pts, dtype=float) / steps


def check_mirror_step_argmax(rng):
    grid = simplex_grid(140)  # about 10^4 points
    for _ in range(10):
        pi = TabularPolicy.from_logits(random_logits(rng, (1, 3)))
        U = rng.normal(size=(1, 3))
        alpha = float(rng.uniform(0.2, 3.0))
        p_t = pi.probs[0]

        def objective(p):
            with np.errstate(divide="ignore", invalid="ignore"):
                kl = np.sum(np.where(p > 0, p * np.log(p / p_t), 0.0), axis=-1)
            return p @ U[0] - kl / alpha

        best = np.max(objective(grid))
        got = objective(mirror_step(pi, U, alpha).probs[0])
        expect(got >= best - 1e-4, f"mirror_step objective {got:.6f} below grid max {best:.6f}")


def check_projection_grid(rng):
    grid = simplex_grid(140)
    for _ in range(10):
        v = rng.normal(size=3)
        p = euclidean_project(v)
        expect(abs(p.sum() - 1) < 1e-12 and np.all(p >= 0), f"projection of {v} left the simplex")
        best = np.min(np.sum((grid - v) ** 2, axis=1))
        got = float(np.sum((p - v) ** 2))
        expect(got <= best + 1e-4, f"projection of {v} is {got:.6f} from v, grid finds {best:.6f}")


def check_policy_gradient_fd(rng, instances: int = 50):
    worst = 0.0
    for _ in range(instances):
        mdp = random_mdp(rng, int(rng.integers(1, 6)), int(rng.integers(2, 4)), gamma=0.9)
        theta = random_logits(rng, (mdp.n_states, mdp.n_actions))
        probs = softmax(theta)
        d = visitation(mdp, probs) / (1 - mdp.discount)
        g = softmax_policy_gradient(probs, exact_q(mdp, probs), d)
        fd = fd_gradient(lambda t: performance(mdp, softmax(t)), theta)
        worst = max(worst, rel_err(g, fd))
    expect(worst <= 1e-5, f"policy gradient vs finite differences: relative error {worst:.3e}")


def check_mirror_shift(rng):
    for _ in range(100):
        pi = TabularPolicy.from_logits(random_logits(rng, (4, 3)))
        # dyadic values and integer shifts keep every operation exact
        U = rng.integers(-64, 64, size=(4, 3)) / 8.0
        c = rng.integers(-100, 100, size=(4, 1)).astype(float)
        a, b = mirror_step(pi, U, 0.5), mirror_step(pi, U + c, 0.5)
        expect(np.array_equal(a.probs, b.probs), f"mirror_step changed under row shift {c.ravel()}")
        c_real = rng.normal(size=(4, 1)) * 10
        err = np.max(np.abs(mirror_step(pi, U + c_real, 0.5).probs - a.probs))
        expect(err <= 1e-12, f"mirror_step moved by {err:.3e} under a real-valued shift")


def check_soft_pi_improves(rng):
    for _ in range(100):
        mdp = random_mdp(rng, int(rng.integers(1, 6)), 3, gamma=0.9)
        probs = softmax(random_logits(rng, (mdp.n_states, 3)))
        plus = greedy_probs(exact_q(mdp, probs))
        alpha = float(rng.uniform(0.01, 1.0))
        gain = performance(mdp, soft_pi_mix(probs, plus, alpha)) - performance(mdp, probs)
        expect(gain >= -1e-10, f"soft policy iteration lowered J by {-gain:.3e} (alpha={alpha:.3f})")


# -------------------------------------------------------------- bellman


def check_monotone(rng):
    for _ in range(100):
        mdp = random_mdp(rng, 4, 3, gamma=0.9)
        probs = softmax(random_logits(rng, (4, 3)))
        q1 = rng.normal(size=(4, 3))
        q2 = q1 + rng.random((4, 3))
        expect(np.all(bellman.t_pi(mdp, probs, q1) <= bellman.t_pi(mdp, probs, q2)), "T_pi not monotone")
        expect(np.all(bellman.t_opt(mdp, q1) <= bellman.t_opt(mdp, q2)), "T not monotone")


def check_contraction(rng):
    for _ in range(100):
        mdp = random_mdp(rng, 4, 3, gamma=float(rng.uniform(0.1, 0.99)))
        probs = softmax(random_logits(rng, (4, 3)))
        q = rng.normal(size=(4, 3))
        c = float(rng.normal() * 5)
        for name, op in (("T_pi", lambda x: bellman.t_pi(mdp, probs, x)), ("T", lambda x: bellman.t_opt(mdp, x))):
            gap = np.max(np.abs(op(q + c) - op(q)))
            expect(abs(gap - mdp.discount * abs(c)) <= 1e-12,
                   f"{name}: offset {c:.3f} moved output by {gap:.6e}, expected gamma|c|")
        # general pairs contract at least as fast as gamma
        q2 = rng.normal(size=(4, 3))
        gap = np.max(np.abs(bellman.t_opt(mdp, q) - bellman.t_opt(mdp, q2)))
        expect(gap <= mdp.discount * np.max(np.abs(q - q2)) + 1e-12, "T is not a gamma-contraction")


def check_power_composition(rng):
    for _ in range(100):
        mdp = random_mdp(rng, 4, 2, gamma=0.9)
        probs = softmax(random_logits(rng, (4, 2)))
        q = rng.normal(size=(4, 2))
        h1, h2 = (int(x) for x in rng.integers(0, 5, size=2))
        for mode in bellman.SEARCH_MODES:
            whole = bellman.search_values(mdp, q, h1 + h2, mode, probs)
            split = bellman.search_values(mdp, bellman.search_values(mdp, q, h1, mode, probs), h2, mode, probs)
            expect(np.array_equal(whole, split), f"{mode} search with h={h1}+{h2} is not the composed power")


def check_greedy_dominates(rng):
    for _ in range(100):
        mdp = random_mdp(rng, 4, 3, gamma=0.9)
        probs = softmax(random_logits(rng, (4, 3)))
        q = rng.normal(size=(4, 3))
        h = int(rng.integers(0, 6))
        gap = np.min(bellman.search_values(mdp, q, h, bellman.GREEDY)
                     - bellman.search_values(mdp, q, h, bellman.EVAL, probs))
        expect(gap >= -1e-12, f"greedy search below eval search by {-gap:.3e} at h={h}")


def check_lookahead_recursion(rng):
    for _ in range(100):
        mdp = random_mdp(rng, 4, 3, gamma=0.9)
        probs = softmax(random_logits(rng, (4, 3)))
        q = rng.normal(size=(4, 3))
        h = int(rng.integers(1, 7))
        err = np.max(np.abs(bellman.lookahead_recursion(mdp, probs, q, h)
                            - bellman.search_values(mdp, q, h, bellman.EVAL, probs)))
        expect(err <= 1e-10, f"lookahead recursion off by {err:.3e} at h={h}")


def check_eval_error_bound(rng):
    for _ in range(100):
        mdp = random_mdp(rng, 4, 3, gamma=0.9)
        probs = softmax(random_logits(rng, (4, 3)))
        q_pi = exact_q(mdp, probs)
        leaf = q_pi + rng.normal(size=(4, 3))
        h = int(rng.integers(0, 8))
        err = np.max(np.abs(bellman.search_values(mdp, leaf, h, bellman.EVAL, probs) - q_pi))
        bound = mdp.discount ** h * np.max(np.abs(leaf - q_pi))
        expect(bound - err >= -1e-10, f"eval search error {err:.3e} exceeds gamma^h bound {bound:.3e}")


# -------------------------------------------------------------- updates


def check_optimistic_steady_state(rng):
    for _ in range(100):
        g = rng.normal(size=(3, 2))
        mu, beta = float(rng.uniform(0, 0.99)), float(rng.uniform(0.1, 2))
        state = replace(UpdateState.fresh(g.shape, mu, beta), u_prev=beta * g)
        u, _ = optimistic_update(state, g, g)
        expect(np.array_equal(u, beta * g), "optimistic rule left its fixed point u = beta g")
        # the same point is momentum's steady state under step beta (1 - mu)
        steady = replace(UpdateState.fresh(g.shape, mu, beta * (1 - mu)), u_prev=beta * g)
        u_mom, _ = momentum_update(steady, g)
        err = np.max(np.abs(u_mom - u))
        expect(err <= 1e-12, f"momentum steady state differs by {err:.3e}")


def check_update_linearity(rng):
    for _ in range(100):
        shape = (3, 2)
        state = replace(UpdateState.fresh(shape, float(rng.uniform(0, 0.9)), float(rng.uniform(0.1, 2))),
                        u_prev=rng.normal(size=shape), g_prev=rng.normal(size=shape))
        a, b = rng.normal(size=2)
        g1, g2, h1, h2 = (rng.normal(size=shape) for _ in range(4))
        # state terms are affine; linearity holds for the gradient-dependent part
        zero = np.zeros(shape)
        rules = {
            "vanilla": lambda x, y: vanilla_update(state, x)[0],
            "momentum": lambda x, y: momentum_update(state, x)[0] - momentum_update(state, zero)[0],
            "optimistic": lambda x, y: optimistic_update(state, x, y)[0] - optimistic_update(state, zero, zero)[0],
        }
        for name, f in rules.items():
            lhs = f(a * g1 + b * g2, a * h1 + b * h2)
            rhs = a * f(g1, h1) + b * f(g2, h2)
            err = np.max(np.abs(lhs - rhs))
            expect(err <= 1e-12, f"{name} update is not linear in its gradients (error {err:.3e})")


def check_z_u_agreement(rng):
    zero = np.zeros((3, 2))
    for _ in range(20):
        mu, beta, alpha = float(rng.uniform(0, 0.95)), float(rng.uniform(0.1, 2)), float(rng.uniform(0.1, 1))
        gs = [rng.normal(size=zero.shape) for _ in range(52)]
        for rule in ("vanilla", "momentum", "optimistic"):
            state = UpdateState.fresh(zero.shape, 0.0 if rule == "vanilla" else mu, beta, alpha)
            z = zz = zz_prev = zero
            for t in range(50):
                if rule == "vanilla":
                    u, state = vanilla_update(state, gs[t])
                    z_next = z_recursion(zz, zz_prev, gs[t], zero, alpha, 1.0, 0.0)
                elif rule == "momentum":
                    u, state = momentum_update(state, gs[t])
                    z_next = z_recursion(zz, zz_prev, gs[t], zero, alpha, beta, mu)
                else:
                    g_curr = state.g_prev
                    u, state = optimistic_update(state, gs[t + 1], g_curr)
                    z_next = z_recursion(zz, zz_prev, gs[t + 1], g_curr, alpha, beta, mu)
                z = z + alpha * u
                zz, zz_prev = z_next, zz
                err = np.max(np.abs(z - zz))
                expect(err <= 1e-10 * max(1.0, np.max(np.abs(z))),
                       f"{rule}: logit and update recursions diverge by {err:.3e} at step {t}")


# ---------------------------------------------------------------- optim


def check_adam_sign(rng):
    shape = (4, 3)
    a = b = AdamState.zeros(shape, lr=0.01)
    for _ in range(50):
        g = rng.normal(size=shape)
        da, a = adam_step(a, g)
        db, b = adam_step(b, -g)
        expect(np.array_equal(da, -db), "negated gradients did not negate the Adam step")


def check_elementwise(rng):
    n = 12
    perm = rng.permutation(n)
    a = b = AdamState.zeros((n,), lr=0.01)
    p = rng.normal(size=n)
    for _ in range(20):
        g = rng.normal(size=n)
        da, a = adam_step(a, g)
        db, b = adam_step(b, g[perm])
        expect(np.array_equal(da[perm], db), "Adam couples parameters across positions")
        expect(np.array_equal(sgd_step(p, g, 0.1)[perm], sgd_step(p[perm], g[perm], 0.1)), "SGD couples positions")


# --------------------------------------------------------------- agents


def _small_mdp():
    return load_maze(SMALL_MAP, 0.9)


def check_determinism(rng):
    mdp = _small_mdp()
    seed = int(rng.integers(1 << 31))
    for alg in ("pg", "ac", "fws", "opg_expert", "opg_pred"):
        cfg = RunConfig(algorithm=alg, episodes=5, seed=seed, h=2 if alg == "fws" else 1)
        a, b = run(mdp, cfg), run(mdp, cfg)
        expect(a.same_as(b), f"{alg} is not deterministic for seed {seed}")
        expect(np.all(a.regret >= -1e-9), f"{alg}: negative regret {a.regret.min():.3e}")
        expect(np.all(np.diff(a.cum_regret) >= 0), f"{alg}: cumulative regret decreased")
        expect(emit_trace(a) == emit_trace(b), f"{alg}: CSV output differs between identical runs")


def check_fws_reduces_to_ac(rng):
    mdp = _small_mdp()
    for _ in range(3):
        cfg = RunConfig(algorithm="fws", h=0, episodes=5, seed=int(rng.integers(1 << 31)),
                        zeta=float(rng.uniform(0.01, 0.9)))
        fws = run_fws(mdp, cfg)
        ac = run_ac(mdp, replace(cfg, algorithm="ac"))
        expect(np.array_equal(fws.regret, ac.regret), f"fws(h=0) differs from ac at seed {cfg.seed}")


def check_meta_gradient_fd(rng, instances: int = 20):
    worst = 0.0
    for _ in range(instances):
        S, A = 2, int(rng.integers(2, 4))
        theta = random_logits(rng, (S, A))
        eta = rng.normal(size=(S, A))
        target = softmax(random_logits(rng, (S, A)))
        batch = [random_rollout(rng, S, A, int(rng.integers(1, 4))) for _ in range(int(rng.integers(1, 3)))]
        xi = float(rng.uniform(0.1, 1.0))
        g = meta_gradient(eta, theta, xi, target, batch)
        fd = fd_gradient(lambda e: meta_loss(e, theta, xi, target, batch), eta)
        worst = max(worst, rel_err(g, fd, floor=1e-6))
    expect(worst <= 1e-4, f"meta-gradient vs finite differences: relative error {worst:.3e}")


def check_geometric_greedy_limit(rng):
    for _ in range(10):
        mdp = random_mdp(rng, 5, 3, gamma=0.9)
        q_star, _, _ = value_iteration(mdp, tol=1e-12)
        theta = random_logits(rng, (5, 3))
        target = make_target("geometric", theta, q_star, alpha=1e6)
        tv = 0.5 * np.max(np.sum(np.abs(target.probs - greedy_probs(q_star)), axis=1))
        expect(tv <= 1e-6, f"alpha=1e6 geometric target is {tv:.3e} from greedy in total variation")


# -------------------------------------------------------------- harness


def check_csv_round_trip(rng):
    mdp = _small_mdp()
    tr = run(mdp, RunConfig(algorithm="pg", episodes=3, seed=int(rng.integers(1 << 31))))
    # inject awkward doubles
    tr.regret = tr.regret + rng.random(tr.n_steps) * 1e-7
    back = parse_traces(emit_trace(tr))
    expect(len(back) == 1 and back[0].same_as(tr), "parse(emit(trace)) is not the identity")


def check_sweep_reaggregation(rng):
    mdp = _small_mdp()
    seeds = tuple(int(s) for s in rng.integers(1, 1000, size=3))
    spec = SweepSpec(RunConfig(algorithm="ac", episodes=3), {"zeta": [0.1, 0.5]}, seeds)
    with tempfile.TemporaryDirectory() as tmp:
        records = run_sweeps([spec], mdp, raw_dir=tmp)
        for rec in records:
            traces = [parse_traces(Path(tmp, f"{rec.config_id}_seed{s}.csv").read_text())[0] for s in seeds]
            totals = np.array([np.sum(t.regret) for t in traces])
            finals = np.array([t.regret[-1] for t in traces])
            for got, values in ((rec.total_mean, totals), (rec.final_mean, finals)):
                expect(abs(got - values.mean()) <= 1e-12 * max(1, abs(got)), "sweep mean differs from raw CSVs")
            se = totals.std(ddof=1) / np.sqrt(len(totals))
            expect(abs(rec.total_stderr - se) <= 1e-12 * max(1, se), "sweep stderr differs from raw CSVs")


@dataclass
class Check:
    module: str
    name: str
    fn: object


CHECKS = [
    Check("mdp", "exact_q agrees with iterated evaluation", check_exact_q_vs_iteration),
    Check("mdp", "visitation flow identity and dual performance", check_visitation_flow),
    Check("mdp", "Q* dominates Q_pi", check_vi_dominates),
    Check("mdp", "discount 1 rejected at construction", check_gamma_one_rejected),
    Check("policy", "mirror_step maximizes the regularized objective", check_mirror_step_argmax),
    Check("policy", "simplex projection matches grid search", check_projection_grid),
    Check("policy", "policy gradient matches finite differences", check_policy_gradient_fd),
    Check("policy", "mirror_step invariant to row shifts", check_mirror_shift),
    Check("policy", "soft policy iteration never decreases J", check_soft_pi_improves),
    Check("bellman", "monotonicity", check_monotone),
    Check("bellman", "gamma-contraction", check_contraction),
    Check("bellman", "search power composition", check_power_composition),
    Check("bellman", "greedy search dominates eval search", check_greedy_dominates),
    Check("bellman", "lookahead recursion identity", check_lookahead_recursion),
    Check("bellman", "eval search error bound", check_eval_error_bound),
    Check("updates", "optimistic steady state is momentum's", check_optimistic_steady_state),
    Check("updates", "rules are linear in gradients", check_update_linearity),
    Check("updates", "logit and update recursions agree", check_z_u_agreement),
    Check("optim", "Adam sign equivariance", check_adam_sign),
    Check("optim", "optimizers act elementwise", check_elementwise),
    Check("agents", "runs are deterministic with non-negative regret", check_determinism),
    Check("agents", "forward search with h=0 is actor-critic", check_fws_reduces_to_ac),
    Check("agents", "meta-gradient matches finite differences", check_meta_gradient_fd),
    Check("agents", "large-alpha geometric target is greedy", check_geometric_greedy_limit),
    Check("harness", "CSV round trip is lossless", check_csv_round_trip),
    Check("harness", "sweep aggregates match raw CSVs", check_sweep_reaggregation),
]


@dataclass
class CheckResult:
    module: str
    name: str
    passed: bool
    detail: str
    seconds: float


def run_checks(audit_seed: int = AUDIT_SEED, checks=None) -> list[CheckResult]:
    results = []
    for i, check in enumerate(checks or CHECKS):
        rng = np.random.default_rng([audit_seed, i])
        t0 = time.perf_counter()
        try:
            check.fn(rng)
            passed, detail = True, ""
        except CheckFailure as exc:
            passed, detail = False, str(exc)
        except Exception as exc:  # a crash is a failure with its own counterexample
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(CheckResult(check.module, check.name, passed, detail, time.perf_counter() - t0))
    return results


def format_results(results) -> str:
    width = max(len(r.name) for r in results)
    lines = []
    for r in results:
        verdict = "PASS" if r.passed else "FAIL"
        line = f"{verdict}  {r.module:<8} {r.name:<{width}}  {r.seconds:6.2f}s"
        if r.detail:
            line += f"\n      {r.detail}"
        lines.append(line)
    n_fail = sum(not r.passed for r in results)
    lines.append(f"{len(results) - n_fail}/{len(results)} checks passed")
    return "\n".join(lines)
