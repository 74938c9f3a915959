from dataclasses import replace

import numpy as np
import pytest

from accelpo.agents import (ConfigError, MetaBuffer, RunConfig, TargetSupportError, make_target, meta_gradient,
                            meta_loss, run, run_ac, run_fws, run_opg_expert, run_opg_pred, run_pg, td_step)
from accelpo.mdp import Rollout, TabularMdp, exact_q, random_mdp, value_iteration
from accelpo.policy import TabularPolicy, mirror_step, softmax

from conftest import bandit, maze, maze_run, small_maze

SEEDS = tuple(range(1, 11))


def random_rollout(rng, S, A, n):
    return Rollout(rng.integers(S, size=n), rng.integers(A, size=n), rng.random(n), rng.integers(S, size=n))


def central_diff(f, x, eps=1e-6):
    x = np.array(x, dtype=float)
    g = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = eps
        g[idx] = (f(x + e) - f(x - e)) / (2 * eps)
    return g


# ------------------------------------------------------------------ config


def test_config_defaults_and_validation():
    cfg = RunConfig()
    assert (cfg.xi, cfg.n, cfg.episodes, cfg.meta_optimizer) == (0.5, 2, 500, "adam")
    assert (cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps) == (0.9, 0.999, 1e-8)
    for bad in (dict(algorithm="ppo"), dict(xi=0.0), dict(n=0), dict(h=-1), dict(search_mode="mcts"),
                dict(algorithm="opg_expert", h=0), dict(algorithm="opg_expert", nu=0.0),
                dict(target_kind="other"), dict(meta_optimizer="rmsprop"), dict(episodes=0)):
        with pytest.raises(ConfigError):
            replace(cfg, **bad).validate()


def test_invalid_config_rejected_before_run():
    with pytest.raises(ConfigError):
        run(small_maze(), RunConfig(algorithm="pg", xi=-1.0))


def test_config_errors_are_collected():
    with pytest.raises(ConfigError, match="xi.*n must"):
        RunConfig(xi=0.0, n=0).validate()


# ------------------------------------------------------------------ traces


def test_trace_bookkeeping():
    tr = run(small_maze(), RunConfig(algorithm="pg", episodes=4, seed=5))
    assert tr.n_episodes == 4 and not tr.truncated
    assert tr.episode_end_steps[-1] == tr.n_steps - 1
    assert tr.episode[0] == 1 and tr.episode[-1] == 4
    assert np.all(np.diff(tr.episode) >= 0)
    np.testing.assert_array_equal(tr.cum_regret, np.cumsum(tr.regret))
    assert tr.total_regret == pytest.approx(tr.cum_regret[-1])
    assert np.all(tr.regret >= -1e-9)


def test_max_steps_truncates():
    tr = run(bandit(), RunConfig(algorithm="pg", episodes=1, max_steps=25))
    assert tr.truncated and tr.n_steps == 25 and tr.n_episodes == 0


# ---------------------------------------------------------------------- pg


def test_pg_bandit_sanity():
    tr = run_pg(bandit((1.0, 0.0)), RunConfig(algorithm="pg", xi=0.5, episodes=1, max_steps=2000, seed=3))
    # every sampled score-function step raises pi(a0), so regret never increases
    assert np.all(np.diff(tr.regret) <= 1e-12)
    assert tr.regret[0] == pytest.approx(0.5 / (1 - 0.9))
    assert tr.final_regret < 0.05


def test_pg_deterministic():
    cfg = RunConfig(algorithm="pg", xi=0.1, episodes=5, seed=9)
    assert run_pg(maze(), cfg).same_as(run_pg(maze(), cfg))
    assert not run_pg(maze(), cfg).same_as(run_pg(maze(), replace(cfg, seed=10)))


def test_pg_makes_progress_on_maze():
    traces = [maze_run(RunConfig(algorithm="pg", xi=0.1, seed=s)) for s in SEEDS]
    initial = np.mean([t.initial_regret for t in traces])
    final = np.mean([t.final_regret for t in traces])
    # the simulated mean drops to about 0.60 of the start; the bound leaves margin for that
    assert final <= 0.7 * initial


# ---------------------------------------------------------------------- ac


def test_ac_frozen_critic():
    tr = run_ac(small_maze(), RunConfig(algorithm="ac", zeta=0.0, episodes=3, seed=2))
    assert np.all(tr.regret == tr.regret[0])


def test_td_scalar_fixed_point():
    mdp = TabularMdp(np.ones((1, 1, 1)), np.ones((1, 1)), 0.9, np.ones(1))
    w = np.zeros((1, 1))
    ro = Rollout(np.zeros(1, dtype=int), np.zeros(1, dtype=int), np.ones(1), np.zeros(1, dtype=int))
    for _ in range(10_000):
        w = td_step(mdp, w, np.ones((1, 1)), ro, w, 0.1)
    assert abs(w[0, 0] - 10.0) < 1e-2


def test_td_step_expected_sarsa_target():
    mdp = TabularMdp(np.full((2, 2, 2), 0.5), np.zeros((2, 2)), 0.5, np.array([1.0, 0.0]))
    w = np.array([[1.0, 3.0], [2.0, 6.0]])
    probs = np.array([[0.5, 0.5], [0.25, 0.75]])
    ro = Rollout(np.array([0]), np.array([1]), np.array([1.0]), np.array([1]))
    out = td_step(mdp, w, probs, ro, w, 0.2)
    target = 1.0 + 0.5 * (0.25 * 2.0 + 0.75 * 6.0)
    assert out[0, 1] == pytest.approx(3.0 + 0.2 * (target - 3.0))
    assert np.sum(out != w) == 1


def test_ac_learns_on_maze():
    tr = maze_run(RunConfig(algorithm="ac", xi=0.5, zeta=0.1, seed=1))
    assert np.isfinite(tr.total_regret)
    assert tr.final_regret < tr.initial_regret


# --------------------------------------------------------------------- fws


@pytest.mark.parametrize("seed", [1, 2, 3])
def test_fws_h0_equals_ac(seed):
    cfg = RunConfig(algorithm="fws", h=0, zeta=0.3, episodes=5, seed=seed)
    fws = run_fws(maze(), cfg)
    ac = run_ac(maze(), replace(cfg, algorithm="ac", h=4))
    np.testing.assert_array_equal(fws.regret, ac.regret)
    np.testing.assert_array_equal(fws.episode_end_steps, ac.episode_end_steps)


def test_fws_modes_differ():
    cfg = RunConfig(algorithm="fws", h=3, zeta=0.1, episodes=3, seed=4)
    a = run_fws(small_maze(), cfg)
    b = run_fws(small_maze(), replace(cfg, search_mode="greedy"))
    assert not np.array_equal(a.regret, b.regret)


# ------------------------------------------------------------ meta-gradient


def test_meta_gradient_zero_step(rng):
    theta = rng.normal(size=(2, 3))
    batch = [random_rollout(rng, 2, 3, 2)]
    g = meta_gradient(rng.normal(size=(2, 3)), theta, 0.0, softmax(rng.normal(size=(2, 3))), batch)
    assert np.all(g == 0)


def test_meta_gradient_zero_at_target(rng):
    theta, eta = rng.normal(size=(2, 3)), rng.normal(size=(2, 3))
    batch = [random_rollout(rng, 2, 3, 3)]
    from accelpo.policy import sampled_policy_gradient
    theta_next = theta + 0.4 * sampled_policy_gradient(batch[0], softmax(theta), eta)
    g = meta_gradient(eta, theta, 0.4, TabularPolicy.from_logits(theta_next), batch)
    assert np.max(np.abs(g)) < 1e-12


def test_meta_gradient_stationary_at_current_policy(rng):
    # eta = Q_pi0 with the target equal to the updated learner: KL is at its minimum
    mdp = random_mdp(rng, 2, 2)
    theta = np.zeros((2, 2))
    eta = exact_q(mdp, softmax(theta))
    batch = [random_rollout(rng, 2, 2, 2)]
    from accelpo.policy import sampled_policy_gradient
    target = softmax(theta + 0.1 * sampled_policy_gradient(batch[0], softmax(theta), eta))
    assert np.max(np.abs(meta_gradient(eta, theta, 0.1, target, batch))) < 1e-10


def test_meta_gradient_finite_differences():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        A = int(rng.integers(2, 4))
        theta, eta = rng.normal(size=(2, A)), rng.normal(size=(2, A))
        target = softmax(rng.normal(size=(2, A)))
        batch = [random_rollout(rng, 2, A, int(rng.integers(1, 4))) for _ in range(int(rng.integers(1, 3)))]
        xi = float(rng.uniform(0.1, 1.0))
        g = meta_gradient(eta, theta, xi, target, batch)
        fd = central_diff(lambda e: meta_loss(e, theta, xi, target, batch), eta)
        assert np.linalg.norm(g - fd) <= 1e-4 * max(np.linalg.norm(fd), 1e-6)


def test_meta_gradient_support_violation(rng):
    theta = rng.normal(size=(2, 2))
    target = np.array([[1.0, 0.0], [0.5, 0.5]])
    batch = [Rollout(np.array([0, 1]), np.array([0, 0]), np.zeros(2), np.array([1, 0]))]
    with pytest.raises(TargetSupportError, match=r"states \[0\]"):
        meta_gradient(np.zeros((2, 2)), theta, 0.1, target, batch)


def test_meta_buffer_fifo(rng):
    buf = MetaBuffer(2)
    rolls = [random_rollout(rng, 2, 2, 1) for _ in range(3)]
    for r in rolls:
        buf.push(r)
    assert buf.full() and len(buf) == 2
    assert buf[0] is rolls[1] and buf[1] is rolls[2]
    buf.clear()
    assert len(buf) == 0
    with pytest.raises(ValueError):
        MetaBuffer(0)


# ----------------------------------------------------------------- targets


def test_geometric_target_constant_q(rng):
    theta = rng.normal(size=(3, 2))
    target = make_target("geometric", theta, np.repeat(rng.normal(size=(3, 1)), 2, axis=1), alpha=2.0)
    np.testing.assert_allclose(target.probs, softmax(theta), atol=1e-15)


def test_geometric_target_closed_form():
    theta = np.array([[0.2, -0.4, 1.0]])
    Q = np.array([[1.0, 2.0, -0.5]])
    p = np.exp(theta) * np.exp(Q)
    np.testing.assert_allclose(make_target("geometric", theta, Q, alpha=1.0).probs, p / p.sum(), atol=1e-15)


def test_geometric_target_greedy_limit(rng):
    mdp = random_mdp(rng, 5, 3)
    q_star, pi_star, _ = value_iteration(mdp, tol=1e-12)
    target = make_target("geometric", rng.normal(size=(5, 3)), q_star, alpha=1e6)
    assert 0.5 * np.max(np.sum(np.abs(target.probs - pi_star), axis=1)) <= 1e-6


def test_parametric_target_zero_advantage(rng):
    theta = rng.normal(size=(2, 2))
    batch = [random_rollout(rng, 2, 2, 2)]
    target = make_target("parametric", theta, np.ones((2, 2)), xi=0.5, h=1, batch=batch)
    np.testing.assert_allclose(target.probs, softmax(theta), atol=1e-15)


def test_parametric_target_replays_buffer(rng):
    from accelpo.policy import sampled_policy_gradient
    theta, Q = rng.normal(size=(2, 2)), rng.normal(size=(2, 2))
    batch = [random_rollout(rng, 2, 2, 2) for _ in range(2)]
    expected = theta.copy()
    for ro in batch:
        expected = expected + 0.3 * sampled_policy_gradient(ro, softmax(expected), Q)
    target = make_target("parametric", theta, Q, xi=0.3, h=2, batch=batch)
    np.testing.assert_allclose(target.probs, softmax(expected), atol=1e-15)
    with pytest.raises(ValueError):
        make_target("parametric", theta, Q, h=0, batch=batch)
    with pytest.raises(ValueError):
        make_target("other", theta, Q)


def test_geometric_target_is_mirror_step(rng):
    theta, Q = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    np.testing.assert_array_equal(make_target("geometric", theta, Q, alpha=0.7).probs,
                                  mirror_step(TabularPolicy.from_logits(theta), Q, 0.7).probs)


# --------------------------------------------------------------- opg agents


@pytest.mark.parametrize("kind", ["geometric", "parametric"])
@pytest.mark.parametrize("opt", ["adam", "sgd"])
def test_opg_deterministic(kind, opt):
    cfg = RunConfig(algorithm="opg_expert", xi=0.1, nu=0.01, target_kind=kind, meta_optimizer=opt,
                    episodes=3, seed=6)
    a, b = run_opg_expert(small_maze(), cfg), run_opg_expert(small_maze(), cfg)
    assert a.same_as(b)
    assert np.all(a.regret >= -1e-9)


def test_pred_with_exact_critic_equals_expert():
    cfg = RunConfig(algorithm="opg_expert", xi=0.1, nu=0.01, h=1, episodes=10, seed=8)
    expert = run_opg_expert(maze(), cfg)
    mdp = maze()
    pred = run_opg_pred(mdp, replace(cfg, algorithm="opg_pred"), critic_override=lambda p: exact_q(mdp, p))
    np.testing.assert_array_equal(expert.regret, pred.regret)


def test_opg_meta_period():
    # with h = 3 the meta update happens every third rollout; runs stay finite and deterministic
    cfg = RunConfig(algorithm="opg_pred", xi=0.5, nu=0.01, h=3, episodes=3, seed=1)
    a, b = run(small_maze(), cfg), run(small_maze(), cfg)
    assert a.same_as(b) and np.all(np.isfinite(a.regret))


def test_opg_expert_beats_pg_on_maze():
    pg = [maze_run(RunConfig(algorithm="pg", xi=0.1, seed=s)) for s in (1, 2, 3)]
    opg = [maze_run(RunConfig(algorithm="opg_expert", xi=0.1, nu=0.01, target_kind="geometric", seed=s))
           for s in (1, 2, 3)]
    assert np.mean([t.final_regret for t in opg]) < np.mean([t.final_regret for t in pg])


def test_all_runners_non_negative_regret():
    for alg in ("pg", "ac", "fws", "opg_expert", "opg_pred"):
        tr = run(small_maze(), RunConfig(algorithm=alg, episodes=5, seed=11, h=2))
        assert np.all(tr.regret >= -1e-9), alg
        assert np.all(np.diff(tr.cum_regret) >= 0)
