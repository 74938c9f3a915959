"""Grid sweeps over RunConfig fields, seeded replication and aggregation."""
from __future__ import annotations

import hashlib
import itertools
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..agents import ConfigError, RegretTrace, RunConfig, run
from ..mdp import TabularMdp, default_maze, load_maze
from .config import build_config, load_toml

DEFAULT_SEEDS = tuple(range(1, 11))


@dataclass(frozen=True)
class SweepSpec:
    base: RunConfig
    axes: dict = field(default_factory=dict)
    seeds: tuple = DEFAULT_SEEDS

    def __post_init__(self):
        if not self.seeds:
            raise ConfigError("sweep needs at least one seed")
        for name, values in self.axes.items():
            if name not in RunConfig.keys() or name == "seed":
                raise ConfigError(f"cannot sweep over {name!r}")
            if not values:
                raise ConfigError(f"axis {name!r} is empty")

    def points(self) -> list[tuple[dict, RunConfig]]:
        """Grid points in declaration order, each with its validated config."""
        names = list(self.axes)
        out = []
        for combo in itertools.product(*(self.axes[n] for n in names)):
            values = dict(zip(names, combo))
            cfg, _ = build_config(values, self.base)
            out.append((values, cfg))
        return out


@dataclass
class AggregateRecord:
    config_id: str
    axes: dict
    seeds: list
    final_regret: list
    total_regret: list

    @property
    def final_mean(self) -> float:
        return float(np.mean(self.final_regret))

    @property
    def total_mean(self) -> float:
        return float(np.mean(self.total_regret))

    @property
    def final_stderr(self) -> float:
        return stderr(self.final_regret)

    @property
    def total_stderr(self) -> float:
        return stderr(self.total_regret)


def stderr(values) -> float:
    """Sample standard deviation over sqrt(count); 0 for a single value."""
    values = np.asarray(values, dtype=float)
    if len(values) < 2:
        return 0.0
    return float(np.std(values, ddof=1) / math.sqrt(len(values)))


def config_id(cfg: RunConfig) -> str:
    payload = {k: v for k, v in cfg.to_dict().items() if k != "seed"}
    return hashlib.sha1(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:12]


def aggregate(cfg: RunConfig, axes: dict, traces: list[RegretTrace]) -> AggregateRecord:
    ordered = sorted(traces, key=lambda t: t.seed)
    return AggregateRecord(config_id(cfg), dict(axes), [t.seed for t in ordered],
                           [t.final_regret for t in ordered], [t.total_regret for t in ordered])


def _run_one(args):
    mdp, cfg = args
    return run(mdp, cfg)


def run_sweeps(specs, mdp: TabularMdp | None = None, jobs: int = 1, raw_dir=None, progress=None):
    """Run every (grid point, seed) pair; results are merged in grid order.

    ``raw_dir`` receives one trace CSV per run. ``progress`` is called
    with each finished trace.
    """
    from .csvio import write_trace

    mdp = mdp or default_maze()
    tasks = []
    for spec in specs:
        for values, cfg in spec.points():
            tasks.append((values, cfg, [replace(cfg, seed=s) for s in spec.seeds]))
    flat = [(mdp, c) for _, _, cfgs in tasks for c in cfgs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = []
            for tr in pool.map(_run_one, flat):
                results.append(tr)
                if progress:
                    progress(tr)
    else:
        results = []
        for item in flat:
            tr = _run_one(item)
            results.append(tr)
            if progress:
                progress(tr)
    records = []
    pos = 0
    for values, cfg, cfgs in tasks:
        traces = results[pos:pos + len(cfgs)]
        pos += len(cfgs)
        axes = {"algorithm": cfg.algorithm, **values}
        records.append(aggregate(cfg, axes, traces))
        if raw_dir is not None:
            Path(raw_dir).mkdir(parents=True, exist_ok=True)
            for tr in traces:
                write_trace(tr, Path(raw_dir) / f"{config_id(cfg)}_seed{tr.seed}.csv")
    return records


def axis_columns(records) -> list[str]:
    cols = []
    for rec in records:
        for name in rec.axes:
            if name not in cols:
                cols.append(name)
    return cols


# ------------------------------------------------------------- presets

FORWARD_SEARCH = dict(algorithm="fws", xi=0.5, n=2, episodes=500)
ZETAS = (0.01, 0.1, 0.5, 0.9)
HORIZONS = (0, 1, 2, 4, 8, 16)
META_NUS = (0.001, 0.003, 0.01, 0.03, 0.1)
TARGET_KINDS = ("geometric", "parametric")
EXPERT = dict(algorithm="opg_expert", xi=0.1, h=1, alpha=1.0, n=2, episodes=500, meta_optimizer="adam")
PRED = dict(algorithm="opg_pred", xi=0.5, zeta=0.1, h=1, alpha=1.0, n=2, episodes=500, meta_optimizer="adam")


def _spec(base: dict, axes: dict, seeds=DEFAULT_SEEDS) -> SweepSpec:
    return SweepSpec(RunConfig(**base).validate(), axes, tuple(seeds))


def preset(name: str, seeds=DEFAULT_SEEDS) -> list[SweepSpec]:
    if name in ("fig2a", "fig2b"):
        mode = "eval" if name == "fig2a" else "greedy"
        return [_spec({**FORWARD_SEARCH, "search_mode": mode}, {"zeta": list(ZETAS), "h": list(HORIZONS)}, seeds)]
    if name == "fig3a":
        return [_spec(dict(algorithm="pg", xi=0.1, n=2, episodes=500), {}, seeds),
                _spec(EXPERT, {"target_kind": list(TARGET_KINDS), "nu": list(META_NUS)}, seeds)]
    if name in ("fig3b", "fig3c"):
        zetas = [0.1] if name == "fig3b" else [0.1, 0.5]
        return [_spec(dict(algorithm="ac", xi=0.5, n=2, episodes=500), {"zeta": zetas}, seeds),
                _spec(PRED, {"zeta": zetas, "target_kind": list(TARGET_KINDS), "nu": list(META_NUS)}, seeds)]
    raise ConfigError(f"unknown preset {name!r} (expected fig2a, fig2b, fig3a, fig3b, fig3c)")


PRESETS = ("fig2a", "fig2b", "fig3a", "fig3b", "fig3c")


def load_sweep(path) -> tuple[list[SweepSpec], dict]:
    """Sweep file: ``[base]`` run keys, ``[axes]`` lists, optional ``seeds`` and ``map``."""
    data = load_toml(path)
    unknown = sorted(set(data) - {"base", "axes", "seeds", "map", "gamma", "preset"})
    if unknown:
        raise ConfigError(f"unknown sweep keys: {', '.join(unknown)}")
    seeds = tuple(data.get("seeds", DEFAULT_SEEDS))
    extras = {k: data[k] for k in ("map", "gamma") if k in data}
    if "map" in extras and not Path(extras["map"]).is_absolute():
        extras["map"] = str(Path(path).parent / extras["map"])
    if "preset" in data:
        return preset(data["preset"], seeds), extras
    base, base_extras = build_config(data.get("base", {}))
    extras = {**base_extras, **extras}
    return [SweepSpec(base, dict(data.get("axes", {})), seeds)], extras


def mdp_from_extras(extras: dict) -> TabularMdp:
    gamma = float(extras.get("gamma", 0.99))
    if "map" in extras:
        return load_maze(Path(extras["map"]).read_text(encoding="utf-8"), gamma)
    return default_maze(gamma)
