import functools
import hashlib
from dataclasses import dataclass

import numpy as np
import pytest

from accelpo.agents import RunConfig, run
from accelpo.mdp import TabularMdp, default_maze, load_maze

ACCEPTANCE_LINES: list[str] = []


@functools.lru_cache(maxsize=None)
def maze():
    return default_maze()


@dataclass(frozen=True)
class RunSummary:
    algorithm: str
    seed: int
    initial_regret: float
    final_regret: float
    total_regret: float
    digest: str


@functools.lru_cache(maxsize=None)
def maze_run(cfg: RunConfig) -> RunSummary:
    """Default-maze runs, shared between test modules; only a summary is kept."""
    tr = run(maze(), cfg)
    digest = hashlib.sha256(tr.regret.tobytes() + tr.episode_end_steps.tobytes()).hexdigest()
    return RunSummary(tr.algorithm, tr.seed, float(tr.regret[0]), tr.final_regret, tr.total_regret, digest)


def bandit(rewards=(1.0, 0.0), gamma=0.9) -> TabularMdp:
    k = len(rewards)
    return TabularMdp(np.ones((1, k, 1)), np.array([rewards], dtype=float), gamma, np.ones(1))


def small_maze(gamma=0.9):
    return load_maze("S..\n.#.\n..G\n", gamma)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
