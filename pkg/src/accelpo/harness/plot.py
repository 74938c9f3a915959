"""Static SVG line charts of regret traces or sweep aggregates."""
from __future__ import annotations

import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .csvio import AGGREGATE_TAIL, TRACE_COLUMNS, SchemaError, parse_aggregates, parse_traces  # noqa: E402

plt.rcParams["svg.fonttype"] = "none"
plt.rcParams["svg.hashsalt"] = "accelpo"


def _header(text: str) -> list[str]:
    row = next(csv.reader(text.splitlines()), None)
    if not row:
        raise SchemaError("empty CSV")
    return row


def plot_csvs(paths, out, x: str = "step", x_axis: str | None = None, series_axis: str | None = None):
    """Render one chart from trace CSVs or aggregate CSVs (all files must share a schema).

    Traces: x is ``step`` or ``episode``, y is regret. Aggregates: x is
    ``x_axis`` (default ``h`` if present), y the mean total regret with a
    one-stderr band, one series per value of ``series_axis``.
    """
    texts = [Path(p).read_text(encoding="utf-8") for p in paths]
    if not texts:
        raise SchemaError("no input files")
    headers = [_header(t) for t in texts]
    if any(h != headers[0] for h in headers):
        raise SchemaError("CSV files do not share a schema")
    fig, ax = plt.subplots(figsize=(6, 4))
    if tuple(headers[0]) == TRACE_COLUMNS:
        n = _plot_traces(ax, texts, x)
    elif headers[0][0] == "config_id" and tuple(headers[0][-len(AGGREGATE_TAIL):]) == AGGREGATE_TAIL:
        n = _plot_aggregates(ax, texts, headers[0], x_axis, series_axis)
    else:
        plt.close(fig)
        raise SchemaError(f"unrecognized CSV header {headers[0]}")
    if n == 0:
        plt.close(fig)
        raise SchemaError("CSV has no data rows")
    if n > 1:
        ax.legend()
    fig.tight_layout()
    fig.savefig(out, format="svg", metadata={"Date": None})
    plt.close(fig)
    return n


def _plot_traces(ax, texts, x):
    n = 0
    for text in texts:
        for tr in parse_traces(text):
            if x == "episode":
                xs, ys = range(1, tr.n_episodes + 1), tr.episode_regret
            else:
                xs, ys = range(1, tr.n_steps + 1), tr.regret
            ax.plot(list(xs), ys, label=f"{tr.algorithm} seed {tr.seed}")
            n += 1
    ax.set_xlabel(x)
    ax.set_ylabel("regret")
    return n


def _plot_aggregates(ax, texts, header, x_axis, series_axis):
    rows = [r for t in texts for r in parse_aggregates(t)]
    axes = header[1:-len(AGGREGATE_TAIL)]
    if x_axis is None:
        x_axis = "h" if "h" in axes else (axes[-1] if axes else "config_id")
    if series_axis is None:
        others = [a for a in axes if a != x_axis]
        series_axis = others[0] if others else None
    groups: dict[str, list] = {}
    for r in rows:
        key = r.get(series_axis, "") if series_axis else ""
        groups.setdefault(key, []).append(r)
    for key, group in groups.items():
        try:
            group.sort(key=lambda r: float(r[x_axis]))
            xs = [float(r[x_axis]) for r in group]
        except ValueError:
            xs = [r[x_axis] for r in group]
        mean = [r["total_regret_mean"] for r in group]
        se = [r["total_regret_stderr"] for r in group]
        label = f"{series_axis}={key}" if series_axis else "total regret"
        ax.plot(xs, mean, marker="o", label=label)
        ax.fill_between(xs, [m - s for m, s in zip(mean, se)], [m + s for m, s in zip(mean, se)], alpha=0.2)
    ax.set_xlabel(x_axis)
    ax.set_ylabel("total_regret_mean")
    return len(groups) if rows else 0
