"""Run configuration: JSON documents in, engine parameters out, fail closed.

A config document is a flat JSON object whose keys mirror the engine
parameters, plus a structured ``rate`` (the offered-load schedule) and an
optional ``failures`` list.  Loading rejects unknown keys, wrong types, and
out-of-range values instead of guessing; a typo'd key is an error, not a
silently ignored default.

Environment variables override document values after the file is read:
``ENRICHBENCH_<KEY>`` targets a top-level key and ``__`` descends into
nested objects, so ``ENRICHBENCH_SEED=3`` sets the seed and
``ENRICHBENCH_RATE__CONSTANT=2000`` the constant rate.  Values are parsed
as JSON when possible (numbers, booleans, lists, objects) and taken as
bare strings otherwise, so ``ENRICHBENCH_STRATEGY=async`` needs no quotes.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

from .engine import EngineParams, FailureSpec
from .enrichment import STRATEGY_KINDS
from .partitioning import Partitioner
from .workloads import RateSchedule

__all__ = [
    "ConfigError",
    "ParseError",
    "ValidationError",
    "RateSpec",
    "RunConfig",
    "ENV_PREFIX",
    "env_overrides",
    "load_config",
    "loads_config",
    "dump_config",
]

ENV_PREFIX = "ENRICHBENCH_"

ARRIVAL_MODES = ("poisson", "uniform")
WORKLOADS = ("fraud", "log")


class ConfigError(ValueError):
    """Base class for configuration problems."""


class ParseError(ConfigError):
    """The document is not well-formed JSON or not a JSON object."""


class ValidationError(ConfigError):
    """The document is well-formed but describes an invalid run."""


# --- rate schedules ---------------------------------------------------------

@dataclass(frozen=True)
class RateSpec:
    """Offered-load schedule in one of three forms.

    ``constant`` holds a single rate; ``ramp`` holds (initial, increment,
    step_s, steps); ``steps`` holds explicit (start_s, rate) breakpoints.
    """

    kind: str
    rate: float = 0.0
    initial: float = 0.0
    increment: float = 0.0
    step_s: float = 0.0
    steps: int = 0
    points: tuple[tuple[float, float], ...] = ()

    @classmethod
    def constant(cls, rate: float) -> "RateSpec":
        return cls(kind="constant", rate=float(rate))

    @classmethod
    def ramp(
        cls, initial: float, increment: float, step_s: float, steps: int
    ) -> "RateSpec":
        return cls(
            kind="ramp",
            initial=float(initial),
            increment=float(increment),
            step_s=float(step_s),
            steps=int(steps),
        )

    @classmethod
    def from_json(cls, value: Any, where: str = "rate") -> "RateSpec":
        if isinstance(value, (int, float)) and not isinstance(value, bool):
            return cls.constant(_number(value, where, minimum=0.0))
        if not isinstance(value, dict):
            raise ValidationError(f"{where}: expected a number or an object")
        forms = sorted(value)
        if forms == ["constant"]:
            return cls.constant(_number(value["constant"], f"{where}.constant", minimum=0.0))
        if forms == ["ramp"]:
            body = value["ramp"]
            if not isinstance(body, dict):
                raise ValidationError(f"{where}.ramp: expected an object")
            extra = set(body) - {"initial", "increment", "step_s", "steps"}
            if extra:
                raise ValidationError(
                    f"{where}.ramp: unknown key {sorted(extra)[0]!r}"
                )
            for key in ("initial", "increment", "step_s", "steps"):
                if key not in body:
                    raise ValidationError(f"{where}.ramp: missing key {key!r}")
            spec = cls.ramp(
                _number(body["initial"], f"{where}.ramp.initial", minimum=0.0),
                _number(body["increment"], f"{where}.ramp.increment"),
                _number(body["step_s"], f"{where}.ramp.step_s", minimum=1e-6),
                _integer(body["steps"], f"{where}.ramp.steps", minimum=1),
            )
            if spec.initial + spec.increment * (spec.steps - 1) < 0:
                raise ValidationError(f"{where}.ramp: rates become negative")
            return spec
        if forms == ["steps"]:
            body = value["steps"]
            if not isinstance(body, list) or not body:
                raise ValidationError(f"{where}.steps: expected a non-empty list")
            points = []
            for i, pair in enumerate(body):
                if not isinstance(pair, list) or len(pair) != 2:
                    raise ValidationError(
                        f"{where}.steps[{i}]: expected [start_s, rate]"
                    )
                points.append(
                    (
                        _number(pair[0], f"{where}.steps[{i}][0]", minimum=0.0),
                        _number(pair[1], f"{where}.steps[{i}][1]", minimum=0.0),
                    )
                )
            if points[0][0] != 0.0:
                raise ValidationError(f"{where}.steps: first start must be 0")
            starts = [s for s, _ in points]
            if starts != sorted(set(starts)):
                raise ValidationError(f"{where}.steps: starts must strictly increase")
            return cls(kind="steps", points=tuple(points))
        raise ValidationError(
            f"{where}: expected exactly one of 'constant', 'ramp', or 'steps'"
        )

    def to_json(self) -> Any:
        if self.kind == "constant":
            return {"constant": self.rate}
        if self.kind == "ramp":
            return {
                "ramp": {
                    "initial": self.initial,
                    "increment": self.increment,
                    "step_s": self.step_s,
                    "steps": self.steps,
                }
            }
        return {"steps": [[s, r] for s, r in self.points]}

    def to_schedule(self) -> RateSchedule:
        if self.kind == "constant":
            return RateSchedule.constant(self.rate)
        if self.kind == "ramp":
            return RateSchedule.ramp(self.initial, self.increment, self.step_s, self.steps)
        return RateSchedule([(round(s * 1e6), r) for s, r in self.points])


# --- field checking ---------------------------------------------------------

def _number(value: Any, where: str, minimum: float | None = None) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(f"{where}: expected a number, got {value!r}")
    out = float(value)
    if minimum is not None and out < minimum:
        raise ValidationError(f"{where}: must be >= {minimum}, got {out}")
    return out


def _integer(value: Any, where: str, minimum: int | None = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ValidationError(f"{where}: expected an integer, got {value!r}")
    if minimum is not None and value < minimum:
        raise ValidationError(f"{where}: must be >= {minimum}, got {value}")
    return value


def _boolean(value: Any, where: str) -> bool:
    if not isinstance(value, bool):
        raise ValidationError(f"{where}: expected true or false, got {value!r}")
    return value


def _string(value: Any, where: str) -> str:
    if not isinstance(value, str):
        raise ValidationError(f"{where}: expected a string, got {value!r}")
    return value


def _choice(value: Any, where: str, allowed: tuple[str, ...]) -> str:
    out = _string(value, where)
    if out not in allowed:
        raise ValidationError(
            f"{where}: {out!r} is not one of {', '.join(allowed)}"
        )
    return out


def _fraction(value: Any, where: str) -> float:
    out = _number(value, where, minimum=0.0)
    if out > 1.0:
        raise ValidationError(f"{where}: must be <= 1, got {out}")
    return out


# name -> checker; one entry per scalar field of RunConfig
_CHECKERS: dict[str, Any] = {
    "seed": lambda v, w: _integer(v, w),
    "horizon_s": lambda v, w: _number(v, w, minimum=1e-6),
    "parallelism": lambda v, w: _integer(v, w, minimum=1),
    "workload": lambda v, w: _choice(v, w, WORKLOADS),
    "arrival_mode": lambda v, w: _choice(v, w, ARRIVAL_MODES),
    "n_accounts": lambda v, w: _integer(v, w, minimum=1),
    "known_receiver_prob": _fraction,
    "known_device_prob": _fraction,
    "known_location_prob": _fraction,
    "amount_mu": lambda v, w: _number(v, w),
    "amount_sigma": lambda v, w: _number(v, w, minimum=0.0),
    "n_services": lambda v, w: _integer(v, w, minimum=1),
    "model_name": _string,
    "fetch_ms": lambda v, w: _number(v, w, minimum=0.0),
    "session_init_ms": lambda v, w: _number(v, w, minimum=0.0),
    "predict_ms": lambda v, w: _number(v, w, minimum=0.0),
    "model_size_mb": lambda v, w: _number(v, w, minimum=0.0),
    "session_memory_budget_mb": lambda v, w: _number(v, w, minimum=0.0),
    "blob_size_bytes": lambda v, w: _integer(v, w, minimum=0),
    "object_store_concurrency": lambda v, w: _integer(v, w, minimum=1),
    "flush_interval_s": lambda v, w: _number(v, w, minimum=1e-6),
    "strategy": lambda v, w: _choice(v, w, STRATEGY_KINDS),
    "sync_sequential": _boolean,
    "async_ordered": _boolean,
    "max_in_flight": lambda v, w: _integer(v, w, minimum=1),
    "routing": lambda v, w: _choice(v, w, tuple(Partitioner.KINDS)),
    "local_cache_capacity": lambda v, w: _integer(v, w, minimum=1),
    "local_access_ms": lambda v, w: _number(v, w, minimum=0.0),
    "external_cache_capacity": lambda v, w: _integer(v, w, minimum=1),
    "embedded_records": lambda v, w: _integer(v, w, minimum=1),
    "bootstrap_rate": lambda v, w: _number(v, w, minimum=1e-6),
    "table_service_ms": lambda v, w: _number(v, w, minimum=0.0),
    "table_concurrency": lambda v, w: _integer(v, w, minimum=1),
    "cache_service_ms": lambda v, w: _number(v, w, minimum=0.0),
    "cache_concurrency": lambda v, w: _integer(v, w, minimum=1),
    "window_size_s": lambda v, w: _number(v, w, minimum=1e-6),
    "window_slide_s": lambda v, w: _number(v, w, minimum=1e-6),
    "pane_cost_ms": lambda v, w: _number(v, w, minimum=0.0),
    "overhead_ms": lambda v, w: _number(v, w, minimum=0.0),
    "queue_capacity": lambda v, w: _integer(v, w, minimum=1),
    "checkpoint_interval_s": lambda v, w: _number(v, w, minimum=1e-6),
    "reporting_interval_s": lambda v, w: _number(v, w, minimum=1e-6),
    "emit_sink": _boolean,
    "emit_exposition": _boolean,
    "capture": _boolean,
}

_REQUIRED = ("horizon_s", "rate")


# --- the configuration object ----------------------------------------------

@dataclass(frozen=True)
class RunConfig:
    """A validated run description; mirrors the engine's parameters."""

    horizon_s: float
    rate: RateSpec
    seed: int = 1
    parallelism: int = 8
    workload: str = "fraud"
    arrival_mode: str = "poisson"
    n_accounts: int = 24_000
    known_receiver_prob: float = 0.98
    known_device_prob: float = 0.99
    known_location_prob: float = 0.98
    amount_mu: float = 3.0
    amount_sigma: float = 1.0
    n_services: int = 12
    model_name: str = "resnet-18"
    fetch_ms: float = 871.0
    session_init_ms: float = 461.0
    predict_ms: float = 90.8
    model_size_mb: float = 45.0
    session_memory_budget_mb: float = 4096.0
    blob_size_bytes: int = 44_700_000
    object_store_concurrency: int = 8
    flush_interval_s: float = 240.0
    strategy: str = "sync"
    sync_sequential: bool = False
    async_ordered: bool = False
    max_in_flight: int = 50
    routing: str = "rebalance"
    local_cache_capacity: int = 3000
    local_access_ms: float = 0.01
    external_cache_capacity: int = 24_000
    embedded_records: int = 24_000
    bootstrap_rate: float = 50_000.0
    table_service_ms: float = 4.0
    table_concurrency: int = 128
    cache_service_ms: float = 0.5
    cache_concurrency: int = 256
    window_size_s: float = 10.0
    window_slide_s: float = 5.0
    pane_cost_ms: float = 20.0
    overhead_ms: float = 0.3
    queue_capacity: int = 1000
    checkpoint_interval_s: float = 600.0
    reporting_interval_s: float = 15.0
    failures: tuple[FailureSpec, ...] = ()
    emit_sink: bool = False
    emit_exposition: bool = False
    capture: bool = False

    @classmethod
    def from_dict(cls, doc: Mapping[str, Any]) -> "RunConfig":
        if not isinstance(doc, Mapping):
            raise ParseError("config must be a JSON object")
        known = set(_CHECKERS) | {"rate", "failures"}
        for key in doc:
            if key not in known:
                raise ValidationError(f"unknown key {key!r}")
        for key in _REQUIRED:
            if key not in doc:
                raise ValidationError(f"missing required key {key!r}")
        out: dict[str, Any] = {"rate": RateSpec.from_json(doc["rate"])}
        for key, check in _CHECKERS.items():
            if key in doc:
                out[key] = check(doc[key], key)
        if "failures" in doc:
            out["failures"] = _parse_failures(doc["failures"])
        return cls(**out)

    def to_dict(self) -> dict[str, Any]:
        """Canonical JSON-ready form; feeding it back reproduces ``self``."""
        doc: dict[str, Any] = {}
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "rate":
                doc["rate"] = self.rate.to_json()
            elif f.name == "failures":
                if value:
                    doc["failures"] = [
                        {"fail_at_s": s.fail_at_s, "restart_delay_s": s.restart_delay_s}
                        for s in value
                    ]
            else:
                doc[f.name] = value
        return doc

    def engine_params(self) -> EngineParams:
        kwargs = {
            f.name: getattr(self, f.name)
            for f in fields(self)
            if f.name != "rate"
        }
        return EngineParams(schedule=self.rate.to_schedule(), **kwargs)


def _parse_failures(value: Any) -> tuple[FailureSpec, ...]:
    if not isinstance(value, list):
        raise ValidationError("failures: expected a list")
    out = []
    for i, item in enumerate(value):
        where = f"failures[{i}]"
        if not isinstance(item, dict):
            raise ValidationError(f"{where}: expected an object")
        extra = set(item) - {"fail_at_s", "restart_delay_s"}
        if extra:
            raise ValidationError(f"{where}: unknown key {sorted(extra)[0]!r}")
        for key in ("fail_at_s", "restart_delay_s"):
            if key not in item:
                raise ValidationError(f"{where}: missing key {key!r}")
        out.append(
            FailureSpec(
                _number(item["fail_at_s"], f"{where}.fail_at_s", minimum=0.0),
                _number(item["restart_delay_s"], f"{where}.restart_delay_s", minimum=0.0),
            )
        )
    return tuple(out)


# --- loading ----------------------------------------------------------------

def env_overrides(env: Mapping[str, str] | None = None) -> dict[str, Any]:
    """Overrides drawn from ``ENRICHBENCH_*`` variables as a nested dict."""
    if env is None:
        env = os.environ
    out: dict[str, Any] = {}
    for name in sorted(env):
        if not name.startswith(ENV_PREFIX):
            continue
        raw = env[name]
        path = name[len(ENV_PREFIX):].lower().split("__")
        if not all(path):
            raise ValidationError(f"{name}: empty key segment")
        try:
            value: Any = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = out
        for segment in path[:-1]:
            nxt = node.setdefault(segment, {})
            if not isinstance(nxt, dict):
                raise ValidationError(f"{name}: conflicts with another override")
            node = nxt
        node[path[-1]] = value
    return out


def _merge(doc: dict[str, Any], overrides: Mapping[str, Any]) -> dict[str, Any]:
    for key, value in overrides.items():
        if (
            isinstance(value, Mapping)
            and isinstance(doc.get(key), dict)
        ):
            _merge(doc[key], value)
        else:
            doc[key] = value
    return doc


def loads_config(
    text: str, env: Mapping[str, str] | None = None
) -> RunConfig:
    """Parse a JSON document, apply environment overrides, validate."""
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from None
    if not isinstance(doc, dict):
        raise ParseError("config must be a JSON object")
    overrides = env_overrides(env)
    if overrides:
        _merge(doc, overrides)
    return RunConfig.from_dict(doc)


def load_config(
    path: str | Path, env: Mapping[str, str] | None = None
) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ParseError(f"cannot read {path}: {exc.strerror or exc}") from None
    return loads_config(text, env)


def dump_config(config: RunConfig) -> str:
    return json.dumps(config.to_dict(), indent=2) + "\n"
