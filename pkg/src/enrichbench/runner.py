"""Scenario execution: run each variant, write its CSVs, summarize everything.

A scenario run produces one directory per variant (the delimited output of
that engine run) plus a ``manifest.json`` at the scenario root holding the
exact configs and headline statistics — overall latency quantiles, the
count-weighted mean, cache hit rate, and the offered rate at which a variant
saturated, if it did.  The manifest contains nothing nondeterministic, so two
runs of the same scenario and seed produce identical trees.
"""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Callable, Sequence

from .config import RunConfig
from .engine import Run, RunResult
from .metrics import MetricsFrame
from .scenarios import Scenario, build_scenario
from .workloads import RateSchedule

__all__ = [
    "MANIFEST_NAME",
    "detect_saturation",
    "run_config",
    "run_scenario",
    "summarize_result",
]

MANIFEST_NAME = "manifest.json"


def _ms(us: float | int) -> float:
    return round(us / 1000.0, 3)


def detect_saturation(
    schedule: RateSchedule, frames: Sequence[MetricsFrame], horizon_s: float
) -> float | None:
    """The lowest offered rate whose whole step consumed < 95% of offered.

    A step is a maximal interval of constant offered rate.  Steps not fully
    covered by reporting frames are skipped rather than guessed at.
    """
    horizon_us = round(horizon_s * 1e6)
    edges = [start for start, _ in schedule.breakpoints] + [horizon_us]
    for (start, rate), end in zip(schedule.breakpoints, edges[1:]):
        end = min(end, horizon_us)
        if end <= start:
            continue
        consumed = 0
        covered_us = 0
        for f in frames:
            f_end = round(f.time_s * 1e6)
            f_start = f_end - round(f.interval_s * 1e6)
            if f_start >= start and f_end <= end:
                consumed += f.consumed
                covered_us += f_end - f_start
        if covered_us < end - start:
            continue
        offered = schedule.count_between(start, end)
        if offered and consumed < 0.95 * offered:
            return rate
    return None


def summarize_result(config: RunConfig, result: RunResult) -> dict[str, Any]:
    """Headline numbers for one run, JSON-ready and deterministic."""
    total = result.tracker.total
    if total.count:
        latency = {
            "count": total.count,
            "mean_ms": _ms(total.mean_us),
            "p50_ms": _ms(total.quantile_us(0.50)),
            "p95_ms": _ms(total.quantile_us(0.95)),
            "p99_ms": _ms(total.quantile_us(0.99)),
            "max_ms": _ms(total.max_us),
        }
    else:
        latency = {"count": 0}
    hits, misses = sum(result.hits), sum(result.misses)
    summary: dict[str, Any] = {
        "events_offered": result.offered_total,
        "events_ingested": result.ingested_total,
        "events_consumed": result.consumed_total,
        "latency": latency,
        "hit_rate": round(hits / (hits + misses), 6) if hits + misses else None,
        "saturated_at_events_per_s": detect_saturation(
            config.rate.to_schedule(), result.frames, config.horizon_s
        ),
        "window_panes": result.boundaries_fired,
        "sink_rows": result.sink_rows_written,
        "aborted": result.aborted,
    }
    if result.aborted:
        summary["abort_reason"] = result.abort_reason
    if config.workload == "log":
        summary["cold_scores"] = result.scorer_cold
        summary["warm_scores"] = result.scorer_warm
    return summary


def run_config(config: RunConfig, out_dir: Path) -> tuple[RunResult, dict[str, Any]]:
    """Execute one config, writing CSVs into ``out_dir``."""
    out_dir.mkdir(parents=True, exist_ok=True)
    result = Run(config.engine_params(), out_dir=out_dir).run()
    return result, summarize_result(config, result)


def run_scenario(
    name: str,
    out_root: Path,
    seed: int = 1,
    repeats: int = 1,
    duration_scale: float = 1.0,
    on_variant: Callable[[str, int, dict[str, Any]], None] | None = None,
) -> tuple[Path, dict[str, Any]]:
    """Run every variant of a scenario, returning the manifest path and body.

    With ``repeats`` > 1 each variant runs once per seed ``seed .. seed +
    repeats - 1`` in its own subdirectory.  Any variant abort is recorded in
    the manifest and does not stop the remaining variants.
    """
    if repeats < 1:
        raise ValueError("repeats must be >= 1")
    seeds = list(range(seed, seed + repeats))
    scenario_dir = Path(out_root) / name
    runs: list[dict[str, Any]] = []
    title = description = ""
    for s in seeds:
        scenario: Scenario = build_scenario(name, duration_scale, s)
        title, description = scenario.title, scenario.description
        for vname, cfg in scenario.variants:
            subdir = vname if len(seeds) == 1 else f"{vname}-seed{s}"
            result, summary = run_config(cfg, scenario_dir / subdir)
            entry = {
                "variant": vname,
                "seed": s,
                "dir": subdir,
                "files": result.csv_names,
                "config": cfg.to_dict(),
                "summary": summary,
            }
            runs.append(entry)
            if on_variant is not None:
                on_variant(vname, s, summary)
    manifest = {
        "scenario": name,
        "title": title,
        "description": description,
        "duration_scale": duration_scale,
        "seeds": seeds,
        "runs": runs,
    }
    path = scenario_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path, manifest
