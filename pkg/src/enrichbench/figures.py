"""Figure rendering from a finished run directory's delimited output.

Each figure id names one chart built purely from the CSVs and manifest of a
scenario directory, so figures can be (re)rendered any time after a run.
PNGs land next to ``manifest.json``, alongside the variant subdirectories.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path
from typing import Any, Iterable

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)

from .runner import MANIFEST_NAME  # noqa: E402

__all__ = ["FIGURE_IDS", "figures_for", "render_figures"]

FIGURE_IDS = (
    "latency_over_time",
    "consumed_rate",
    "busy_per_subtask",
    "hit_rate",
    "failure_recovery",
    "model_spikes",
)

_GENERIC = ("latency_over_time", "consumed_rate", "busy_per_subtask")

_BY_SCENARIO = {
    "sync-vs-async": _GENERIC,
    "cache-comparison": ("latency_over_time", "hit_rate", "busy_per_subtask"),
    "cache-failure": ("failure_recovery", "latency_over_time"),
    "embedded-state": _GENERIC,
    "log-analytics": ("model_spikes", "latency_over_time"),
}


def figures_for(scenario: str) -> tuple[str, ...]:
    return _BY_SCENARIO.get(scenario, _GENERIC)


# --- CSV access -------------------------------------------------------------

def _columns(path: Path) -> dict[str, list[str]]:
    with path.open(newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    return {name: [r[i] for r in body] for i, name in enumerate(header)}


def _series(cols: dict[str, list[str]], x: str, y: str) -> tuple[list[float], list[float]]:
    """Paired float columns, dropping rows where ``y`` is empty."""
    xs, ys = [], []
    for a, b in zip(cols[x], cols[y]):
        if b != "":
            xs.append(float(a))
            ys.append(float(b))
    return xs, ys


def _grouped_hit_rate(cols: dict[str, list[str]]) -> tuple[list[float], list[float]]:
    """Per-frame hit rate summed across subtasks."""
    acc: dict[float, list[int]] = {}
    for t, h, m in zip(cols["time_s"], cols["hits"], cols["misses"]):
        entry = acc.setdefault(float(t), [0, 0])
        entry[0] += int(h)
        entry[1] += int(m)
    xs, ys = [], []
    for t in sorted(acc):
        h, m = acc[t]
        if h + m:
            xs.append(t)
            ys.append(h / (h + m))
    return xs, ys


# --- the charts -------------------------------------------------------------

def _variant_runs(manifest: dict[str, Any], root: Path) -> list[tuple[str, Path, dict]]:
    out = []
    single_seed = len(manifest.get("seeds", [0])) == 1
    for entry in manifest["runs"]:
        label = entry["variant"] if single_seed else entry["dir"]
        out.append((label, root / entry["dir"], entry["config"]))
    return out


def _latency_over_time(ax, runs) -> None:
    for label, path, _cfg in runs:
        cols = _columns(path / "latency.csv")
        ax.plot(*_series(cols, "time_s", "p50_ms"), label=f"{label} p50")
        ax.plot(
            *_series(cols, "time_s", "p99_ms"), linestyle="--", alpha=0.6,
            label=f"{label} p99",
        )
    ax.set_ylabel("first-window latency (ms)")
    ax.set_title("Windowed-result latency over time")


def _consumed_rate(ax, runs) -> None:
    first = True
    for label, path, _cfg in runs:
        cols = _columns(path / "consumed.csv")
        if first:
            ax.plot(
                *_series(cols, "time_s", "generated_per_s"),
                color="0.4", linestyle=":", label="offered",
            )
            first = False
        ax.plot(*_series(cols, "time_s", "events_per_s"), label=label)
    ax.set_ylabel("events/s")
    ax.set_title("Consumed vs offered rate")


def _busy_per_subtask(ax, runs) -> None:
    for label, path, _cfg in runs:
        cols = _columns(path / "busy.csv")
        by_subtask: dict[str, tuple[list[float], list[float]]] = {}
        for t, s, b in zip(cols["time_s"], cols["subtask"], cols["busy_ms_per_s"]):
            xs, ys = by_subtask.setdefault(s, ([], []))
            xs.append(float(t))
            ys.append(float(b))
        color = None
        for s in sorted(by_subtask, key=int):
            xs, ys = by_subtask[s]
            line, = ax.plot(
                xs, ys, alpha=0.55, color=color,
                label=label if color is None else None,
            )
            color = line.get_color()
    ax.set_ylabel("busy ms per s, per subtask")
    ax.set_ylim(bottom=0)
    ax.set_title("Worker busy time")


def _hit_rate(ax, runs) -> None:
    for label, path, _cfg in runs:
        xs, ys = _grouped_hit_rate(_columns(path / "cache.csv"))
        if xs:
            ax.plot(xs, ys, label=label)
    ax.set_ylabel("lookup hit rate")
    ax.set_ylim(-0.02, 1.02)
    ax.set_title("Cache effectiveness over time")


def _failure_recovery(ax, runs) -> None:
    _hit_rate(ax, runs)
    for _label, _path, cfg in runs:
        for spec in cfg.get("failures", []):
            fail = spec["fail_at_s"]
            ax.axvline(fail, color="crimson", linestyle="--", alpha=0.8)
            ax.axvline(
                fail + spec["restart_delay_s"], color="seagreen",
                linestyle="--", alpha=0.8,
            )
    ax.set_title("Hit rate through failure and replay")


def _model_spikes(ax, runs) -> None:
    flush = None
    horizon = 0.0
    for label, path, cfg in runs:
        cols = _columns(path / "latency.csv")
        ax.plot(*_series(cols, "time_s", "max_ms"), label=f"{label} max")
        ax.plot(
            *_series(cols, "time_s", "p50_ms"), linestyle="--", alpha=0.6,
            label=f"{label} p50",
        )
        flush = cfg.get("flush_interval_s", flush)
        horizon = max(horizon, cfg.get("horizon_s", 0.0))
    if flush:
        t = flush
        while t < horizon:
            ax.axvline(t, color="0.6", linestyle=":", alpha=0.8)
            t += flush
    ax.set_ylabel("first-window latency (ms)")
    ax.set_title("Scoring latency across session flushes")


_RENDERERS = {
    "latency_over_time": _latency_over_time,
    "consumed_rate": _consumed_rate,
    "busy_per_subtask": _busy_per_subtask,
    "hit_rate": _hit_rate,
    "failure_recovery": _failure_recovery,
    "model_spikes": _model_spikes,
}


def render_figures(
    scenario_dir: str | Path,
    ids: Iterable[str] | None = None,
) -> list[Path]:
    """Render charts for a finished scenario directory; returns PNG paths."""
    root = Path(scenario_dir)
    manifest = json.loads((root / MANIFEST_NAME).read_text())
    if ids is None:
        ids = figures_for(manifest["scenario"])
    else:
        unknown = set(ids) - set(FIGURE_IDS)
        if unknown:
            raise ValueError(f"unknown figure id {sorted(unknown)[0]!r}")
    runs = _variant_runs(manifest, root)
    written = []
    for fig_id in ids:
        fig, ax = plt.subplots(figsize=(8.0, 4.5), dpi=120)
        try:
            _RENDERERS[fig_id](ax, runs)
            ax.set_xlabel("time (s)")
            if ax.get_legend_handles_labels()[0]:
                ax.legend(fontsize=8)
            fig.tight_layout()
            out = root / f"{fig_id}.png"
            fig.savefig(out)
            written.append(out)
        finally:
            plt.close(fig)
    return written
