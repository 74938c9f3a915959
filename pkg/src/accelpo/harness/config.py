"""TOML run configs and ``key=value`` overrides."""
from __future__ import annotations

import os
import sys
from dataclasses import fields, replace
from pathlib import Path

from ..agents import ConfigError, RunConfig

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SEED_ENV = "ACCELPO_SEED"
# keys accepted in a run config besides the RunConfig fields
EXTRA_KEYS = ("map", "gamma", "out")
_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_value(text: str):
    """TOML scalar syntax (``0.5``, ``true``, ``"eval"``); bare words stay strings."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def parse_overrides(pairs) -> dict:
    out = {}
    for pair in pairs or ():
        key, sep, value = pair.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override {pair!r} is not of the form key=value")
        out[key.strip()] = parse_value(value.strip())
    return out


def _coerce(key, value):
    kind = _FIELD_TYPES[key]
    if kind == "int" or kind is int:
        if isinstance(value, bool) or (isinstance(value, float) and not value.is_integer()):
            raise ConfigError(f"{key} must be an integer, got {value!r}")
        return int(value)
    if kind == "float" or kind is float:
        if isinstance(value, bool):
            raise ConfigError(f"{key} must be a number, got {value!r}")
        return float(value)
    if kind == "bool" or kind is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key} must be true or false, got {value!r}")
        return value
    return str(value)


def build_config(values: dict, base: RunConfig | None = None) -> tuple[RunConfig, dict]:
    """Split ``values`` into a validated RunConfig and the extra keys."""
    unknown = sorted(set(values) - set(_FIELD_TYPES) - set(EXTRA_KEYS))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    run_values = {k: _coerce(k, v) for k, v in values.items() if k in _FIELD_TYPES}
    extras = {k: v for k, v in values.items() if k in EXTRA_KEYS}
    cfg = replace(base or RunConfig(), **run_values)
    return cfg.validate(), extras


def load_toml(path) -> dict:
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def load_run_config(path=None, overrides=None, seed: int | None = None) -> tuple[RunConfig, dict]:
    """Seed precedence: ``seed`` argument, then overrides, then the file, then $ACCELPO_SEED."""
    values = dict(load_toml(path)) if path else {}
    if "seed" not in values and os.environ.get(SEED_ENV):
        values["seed"] = int(os.environ[SEED_ENV])
    values.update(overrides or {})
    if seed is not None:
        values["seed"] = seed
    cfg, extras = build_config(values)
    if "map" in extras and path:
        map_path = Path(extras["map"])
        if not map_path.is_absolute():
            extras["map"] = str(Path(path).parent / map_path)
    return cfg, extras
