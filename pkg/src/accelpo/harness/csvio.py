"""CSV emission and parsing for regret traces and sweep aggregates.

Floats are written with 17 significant digits, which round-trips every
double exactly.
"""
from __future__ import annotations

import csv
import io
from pathlib import Path

import numpy as np

from ..agents import RegretTrace

TRACE_COLUMNS = ("algorithm", "seed", "step", "episode", "regret", "cum_regret", "record")
AGGREGATE_TAIL = ("final_regret_mean", "final_regret_stderr", "total_regret_mean",
                  "total_regret_stderr", "seeds")


class SchemaError(ValueError):
    pass


def fmt(x: float) -> str:
    return "%.17g" % x


def trace_rows(trace: RegretTrace):
    """Step rows (``record=step``) then one summary row per finished episode."""
    cum = trace.cum_regret
    for i in range(trace.n_steps):
        yield (trace.algorithm, trace.seed, i + 1, int(trace.episode[i]), fmt(trace.regret[i]), fmt(cum[i]), "step")
    for k, i in enumerate(trace.episode_end_steps):
        yield (trace.algorithm, trace.seed, int(i) + 1, k + 1, fmt(trace.regret[i]), fmt(cum[i]), "episode")


def emit_trace(trace: RegretTrace) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(TRACE_COLUMNS)
    writer.writerows(trace_rows(trace))
    return buf.getvalue()


def write_trace(trace: RegretTrace, path) -> None:
    Path(path).write_text(emit_trace(trace), encoding="utf-8")


def _read_rows(text: str):
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if not header:
        raise SchemaError("empty CSV")
    return header, [row for row in reader if row]


def parse_traces(text: str) -> list[RegretTrace]:
    """Inverse of ``emit_trace``; a file may hold several (algorithm, seed) traces."""
    header, rows = _read_rows(text)
    if tuple(header) != TRACE_COLUMNS:
        raise SchemaError(f"not a trace CSV: header {header}")
    groups: dict[tuple[str, int], dict[str, list]] = {}
    for alg, seed, step, episode, regret, cum, record in rows:
        g = groups.setdefault((alg, int(seed)), {"step": [], "episode": [], "regret": [], "cum": [], "ends": []})
        if record == "step":
            g["step"].append(int(step))
            g["episode"].append(int(episode))
            g["regret"].append(float(regret))
            g["cum"].append(float(cum))
        elif record == "episode":
            g["ends"].append(int(step) - 1)
        else:
            raise SchemaError(f"unknown record kind {record!r}")
    traces = []
    for (alg, seed), g in groups.items():
        if g["step"] != list(range(1, len(g["step"]) + 1)):
            raise SchemaError(f"steps of ({alg}, {seed}) are not consecutive")
        trace = RegretTrace(alg, seed, np.array(g["regret"]), np.array(g["episode"], dtype=np.int64),
                            np.array(g["ends"], dtype=np.int64))
        if not np.array_equal(trace.cum_regret, np.array(g["cum"])):
            raise SchemaError(f"cum_regret of ({alg}, {seed}) is not the running sum of regret")
        traces.append(trace)
    return traces


def read_traces(path) -> list[RegretTrace]:
    return parse_traces(Path(path).read_text(encoding="utf-8"))


def emit_aggregates(records, axes) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("config_id", *axes, *AGGREGATE_TAIL))
    for rec in records:
        axis_values = [_axis_cell(rec.axes.get(a, "")) for a in axes]
        writer.writerow((rec.config_id, *axis_values, fmt(rec.final_mean), fmt(rec.final_stderr),
                         fmt(rec.total_mean), fmt(rec.total_stderr), len(rec.seeds)))
    return buf.getvalue()


def _axis_cell(value):
    if isinstance(value, float):
        return fmt(value)
    return value


def parse_aggregates(text: str) -> list[dict]:
    header, rows = _read_rows(text)
    if header[0] != "config_id" or tuple(header[-len(AGGREGATE_TAIL):]) != AGGREGATE_TAIL:
        raise SchemaError(f"not an aggregate CSV: header {header}")
    out = []
    for row in rows:
        rec = dict(zip(header, row))
        for key in AGGREGATE_TAIL[:-1]:
            rec[key] = float(rec[key])
        rec["seeds"] = int(rec["seeds"])
        out.append(rec)
    return out
