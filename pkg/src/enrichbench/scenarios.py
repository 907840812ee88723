"""Canned experiment setups, each a named set of comparable run variants.

Every scenario is a list of (variant name, config) pairs that differ only in
the dimension under study — enrichment strategy, cache placement, failure
injection, state backend, or model size — so their outputs can be laid side
by side.  ``duration_scale`` compresses everything that is a *schedule*
(horizon, rate steps, checkpoint/flush/reporting intervals, failure times)
for quick smoke runs while leaving the windowing itself untouched, since
shrinking the windows would change what is being measured.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

from .config import RateSpec, RunConfig
from .engine import FailureSpec

__all__ = [
    "Scenario",
    "SCENARIO_NAMES",
    "MODEL_PRESETS",
    "build_scenario",
    "scale_config",
]

MODEL_PRESETS = {
    "resnet-18": dict(
        model_name="resnet-18",
        fetch_ms=871.0,
        session_init_ms=461.0,
        predict_ms=90.8,
        model_size_mb=45.0,
        blob_size_bytes=44_700_000,
    ),
    "resnet-101": dict(
        model_name="resnet-101",
        fetch_ms=1663.0,
        session_init_ms=1098.0,
        predict_ms=216.75,
        model_size_mb=170.5,
        blob_size_bytes=170_500_000,
    ),
}


@dataclass(frozen=True)
class Scenario:
    name: str
    title: str
    description: str
    variants: tuple[tuple[str, RunConfig], ...]


def scale_config(config: RunConfig, scale: float) -> RunConfig:
    """Compress a config's schedules by ``scale`` (windows stay as they are)."""
    if scale == 1.0:
        return config
    if not 0.0 < scale <= 1.0:
        raise ValueError(f"duration scale must be in (0, 1], got {scale}")
    rate = config.rate
    if rate.kind == "ramp":
        rate = replace(rate, step_s=rate.step_s * scale)
    elif rate.kind == "steps":
        rate = replace(rate, points=tuple((s * scale, r) for s, r in rate.points))
    failures = tuple(
        FailureSpec(f.fail_at_s * scale, f.restart_delay_s * scale)
        for f in config.failures
    )
    return replace(
        config,
        horizon_s=config.horizon_s * scale,
        rate=rate,
        failures=failures,
        checkpoint_interval_s=config.checkpoint_interval_s * scale,
        flush_interval_s=config.flush_interval_s * scale,
        reporting_interval_s=config.reporting_interval_s * scale,
    )


def _sync_vs_async() -> Scenario:
    base = RunConfig(
        horizon_s=390.0,
        rate=RateSpec.ramp(initial=1000.0, increment=100.0, step_s=30.0, steps=13),
        queue_capacity=100,
    )
    return Scenario(
        name="sync-vs-async",
        title="Blocking vs pooled enrichment under a rising offered load",
        description=(
            "Steps the offered rate from 1000 to 2200 events/s in 100/s "
            "increments every 30 s.  The blocking variant holds a worker for "
            "the full lookup round trip and saturates; the pooled variant "
            "overlaps lookups and keeps up."
        ),
        variants=(
            ("sync", replace(base, strategy="sync")),
            ("async", replace(base, strategy="async")),
        ),
    )


def _cache_comparison() -> Scenario:
    base = RunConfig(horizon_s=150.0, rate=RateSpec.constant(4000.0))
    return Scenario(
        name="cache-comparison",
        title="Cached-lookup placements at a fixed 4000 events/s",
        description=(
            "Holds the offered load constant and varies where enrichment "
            "results are kept: no cache (pooled lookups), a per-worker cache "
            "fed by shuffled routing, the same cache fed by key-affine "
            "routing, and a shared external cache service."
        ),
        variants=(
            ("async", replace(base, strategy="async")),
            ("local-cache", replace(base, strategy="local_cache")),
            (
                "partitioned-cache",
                replace(base, strategy="partitioned_local_cache", routing="key_hash"),
            ),
            ("external-cache", replace(base, strategy="external_cache")),
        ),
    )


def _cache_failure() -> Scenario:
    base = RunConfig(
        horizon_s=210.0,
        rate=RateSpec.constant(4000.0),
        strategy="partitioned_local_cache",
        routing="key_hash",
        checkpoint_interval_s=60.0,
        emit_sink=True,
    )
    return Scenario(
        name="cache-failure",
        title="Worker failure and replay with key-affine caching",
        description=(
            "Runs the key-affine cached pipeline twice: untouched, and with "
            "all workers killed at 65 s and restarted 5 s later from the 60 s "
            "checkpoint.  Replay refills the caches from zero and the "
            "deduplicated sink output must match the clean run byte for byte."
        ),
        variants=(
            ("baseline", base),
            ("with-failure", replace(base, failures=(FailureSpec(65.0, 5.0),))),
        ),
    )


def _embedded_state() -> Scenario:
    base = RunConfig(
        horizon_s=90.0,
        rate=RateSpec.constant(4000.0),
        n_accounts=2000,
    )
    return Scenario(
        name="embedded-state",
        title="Embedded reference state vs pooled remote lookups",
        description=(
            "Reference data lives inside the worker: lookups cost "
            "microseconds after a bootstrap that loads records at a fixed "
            "rate.  Compared against pooled remote lookups on the same "
            "2000-account keyspace, with a small and a large record table."
        ),
        variants=(
            ("async", replace(base, strategy="async")),
            (
                "records-2k",
                replace(base, strategy="embedded_state", embedded_records=2000),
            ),
            (
                "records-200k",
                replace(base, strategy="embedded_state", embedded_records=200_000),
            ),
        ),
    )


def _log_analytics() -> Scenario:
    base = RunConfig(
        horizon_s=520.0,
        rate=RateSpec.constant(1000.0),
        workload="log",
        strategy="model_session",
        flush_interval_s=240.0,
    )
    return Scenario(
        name="log-analytics",
        title="Request-log scoring with periodic model-session flushes",
        description=(
            "Scores windowed request logs with a per-service model session "
            "that is torn down every 240 s.  Each flush forces cold scores "
            "(blob fetch plus session build) whose latency spike scales with "
            "the model: compared for a small and a large model."
        ),
        variants=(
            ("resnet-18", replace(base, **MODEL_PRESETS["resnet-18"])),
            ("resnet-101", replace(base, **MODEL_PRESETS["resnet-101"])),
        ),
    )


_BUILDERS = {
    s.name: b
    for b, s in ((f, f()) for f in (
        _sync_vs_async,
        _cache_comparison,
        _cache_failure,
        _embedded_state,
        _log_analytics,
    ))
}

SCENARIO_NAMES = tuple(_BUILDERS)


def build_scenario(
    name: str, duration_scale: float = 1.0, seed: int = 1
) -> Scenario:
    """A scenario by name, with every variant reseeded and time-scaled."""
    if name not in _BUILDERS:
        raise KeyError(
            f"unknown scenario {name!r}; choose from {', '.join(SCENARIO_NAMES)}"
        )
    scenario = _BUILDERS[name]()
    variants = tuple(
        (vname, scale_config(replace(cfg, seed=seed), duration_scale))
        for vname, cfg in scenario.variants
    )
    return replace(scenario, variants=variants)
