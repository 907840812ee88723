"""Latency accounting and delimited metric outputs.

Latency is measured once per event: when the earliest-closing window pane
containing the event is emitted, ``emit_time - ingest_time`` goes into a
geometric histogram (and ``emit_time - create_time`` into a parallel one, so
both readings are inspectable).  The histogram grid runs from 0.1 ms to 120 s
with a factor of sqrt(2) per bucket; quantiles report the upper bound of the
first bucket whose cumulative count reaches the requested rank, so the
quantization error is bounded by (sqrt(2) - 1) times the true value.  An
exact running sum is kept alongside the buckets so the count-weighted mean is
not quantized.

Every reporting interval the engine emits one frame across five delimited
files with fixed schemas (UTF-8, ``\\n`` line endings, ``.`` decimals):

    latency.csv   time_s,count,p50_ms,p95_ms,p99_ms,max_ms,p50_ms_from_create
    cache.csv     time_s,subtask,hits,misses,hit_rate
    busy.csv      time_s,subtask,busy_ms_per_s
    consumed.csv  time_s,events_per_s,generated_per_s
    queues.csv    time_s,channel,occupancy,capacity

A rate whose denominator is zero in an interval is reported as an absent
field, not as 0.  An optional plain-text exposition dump mirrors each frame
as ``name{label="value"} number`` lines for scrape-style consumers.
"""

from __future__ import annotations

import math
from bisect import bisect_left
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO

__all__ = [
    "EmptyHistogram",
    "LatencyHistogram",
    "FirstWindowTracker",
    "MetricsFrame",
    "CsvSink",
    "LATENCY_HEADER",
    "CACHE_HEADER",
    "BUSY_HEADER",
    "CONSUMED_HEADER",
    "QUEUES_HEADER",
    "SINK_HEADER",
    "fmt_num",
]

LATENCY_HEADER = "time_s,count,p50_ms,p95_ms,p99_ms,max_ms,p50_ms_from_create"
CACHE_HEADER = "time_s,subtask,hits,misses,hit_rate"
BUSY_HEADER = "time_s,subtask,busy_ms_per_s"
CONSUMED_HEADER = "time_s,events_per_s,generated_per_s"
QUEUES_HEADER = "time_s,channel,occupancy,capacity"
SINK_HEADER = "window_start_s,window_end_s,key,events,amount_cents,suspicious"

_GRID_LO_US = 100  # 0.1 ms
_GRID_HI_US = 120_000_000  # 120 s


def _build_bounds() -> list[int]:
    bounds = []
    k = 0
    while True:
        b = round(_GRID_LO_US * math.sqrt(2.0) ** k)
        bounds.append(b)
        if b >= _GRID_HI_US:
            return bounds
        k += 1


_BOUNDS_US: list[int] = _build_bounds()


class EmptyHistogram(ValueError):
    """Raised when asking a quantile of a histogram with no samples."""


class LatencyHistogram:
    """Geometric-bucket histogram over non-negative integer microseconds."""

    __slots__ = ("counts", "count", "sum_us", "max_us")

    def __init__(self) -> None:
        self.counts = [0] * len(_BOUNDS_US)
        self.count = 0
        self.sum_us = 0
        self.max_us = 0

    @staticmethod
    def bucket_bounds_us() -> list[int]:
        return list(_BOUNDS_US)

    def record(self, value_us: int) -> None:
        idx = bisect_left(_BOUNDS_US, value_us)
        if idx >= len(_BOUNDS_US):
            idx = len(_BOUNDS_US) - 1  # clamp beyond 120 s
        self.counts[idx] += 1
        self.count += 1
        self.sum_us += value_us
        if value_us > self.max_us:
            self.max_us = value_us

    def quantile_us(self, q: float) -> int:
        """Upper bound of the first bucket whose cumulative count >= q*count."""
        if self.count == 0:
            raise EmptyHistogram("no samples recorded")
        if not 0 <= q <= 1:
            raise ValueError("quantile must be within [0, 1]")
        rank = q * self.count
        cumulative = 0
        for idx, c in enumerate(self.counts):
            cumulative += c
            if cumulative >= rank and cumulative > 0:
                return _BOUNDS_US[idx]
        return _BOUNDS_US[-1]  # pragma: no cover (q=1 exits in the loop)

    @property
    def mean_us(self) -> float:
        if self.count == 0:
            raise EmptyHistogram("no samples recorded")
        return self.sum_us / self.count

    def merge_into(self, other: "LatencyHistogram") -> None:
        for i, c in enumerate(self.counts):
            other.counts[i] += c
        other.count += self.count
        other.sum_us += self.sum_us
        if self.max_us > other.max_us:
            other.max_us = self.max_us

    def reset(self) -> None:
        self.counts = [0] * len(_BOUNDS_US)
        self.count = 0
        self.sum_us = 0
        self.max_us = 0


class FirstWindowTracker:
    """Records each event's latency at its first emitted window pane.

    With replay possible (failure injection), an event id may reach a pane
    twice; ids seen since roughly the last two checkpoints are remembered so
    a replayed event contributes no second sample.  Runs without failures
    skip the bookkeeping entirely (nothing can replay).
    """

    def __init__(self, dedup: bool, capture: bool = False) -> None:
        self.total = LatencyHistogram()
        self.total_from_create = LatencyHistogram()
        self._dedup = dedup
        self._seen_new: set[int] = set()
        self._seen_old: set[int] = set()
        self.capture: list[tuple[int, int]] | None = [] if capture else None

    def record(self, event_id: int, ingest_us: int, create_us: int, emit_us: int) -> bool:
        """Returns True if recorded, False if the id was already sampled."""
        if self._dedup:
            if event_id in self._seen_new or event_id in self._seen_old:
                return False
            self._seen_new.add(event_id)
        latency = emit_us - ingest_us
        self.total.record(latency)
        self.total_from_create.record(emit_us - create_us)
        if self.capture is not None:
            self.capture.append((emit_us, latency))
        return True

    def rotate_seen(self) -> None:
        """Called at checkpoint completion; ages out ids that cannot replay."""
        if self._dedup:
            self._seen_old = self._seen_new
            self._seen_new = set()


@dataclass
class MetricsFrame:
    """One reporting interval's worth of counters (deltas, not cumulative)."""

    time_s: float
    interval_s: float
    latency_count: int
    p50_us: int | None
    p95_us: int | None
    p99_us: int | None
    max_us: int | None
    p50_from_create_us: int | None
    consumed: int
    generated: int
    hits: list[int] = field(default_factory=list)
    misses: list[int] = field(default_factory=list)
    busy_us: list[int] = field(default_factory=list)
    queue_occupancy: list[int] = field(default_factory=list)
    queue_capacity: int = 0


def fmt_num(x) -> str:
    """Canonical decimal formatting: integral floats print as integers."""
    if isinstance(x, float):
        if x.is_integer() and abs(x) < 1e15:
            return str(int(x))
        return repr(x)
    return str(x)


def _us_to_ms_str(v_us: int | None) -> str:
    if v_us is None:
        return ""
    return fmt_num(v_us / 1000.0)


class CsvSink:
    """Owns the per-run output files and writes frames/rows in order."""

    def __init__(
        self,
        out_dir: str | Path,
        emit_sink: bool = False,
        emit_exposition: bool = False,
    ) -> None:
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self._files: dict[str, IO[str]] = {}
        for name, header in (
            ("latency.csv", LATENCY_HEADER),
            ("cache.csv", CACHE_HEADER),
            ("busy.csv", BUSY_HEADER),
            ("consumed.csv", CONSUMED_HEADER),
            ("queues.csv", QUEUES_HEADER),
        ):
            self._files[name] = self._open(name, header)
        if emit_sink:
            self._files["sink.csv"] = self._open("sink.csv", SINK_HEADER)
        self._expo = self._open("metrics.prom", None) if emit_exposition else None
        self.closed = False

    def _open(self, name: str, header: str | None) -> IO[str]:
        f = open(self.out_dir / name, "w", encoding="utf-8", newline="\n")
        if header is not None:
            f.write(header + "\n")
        return f

    def csv_names(self) -> list[str]:
        return sorted(self._files)

    def write_frame(self, frame: MetricsFrame) -> None:
        t = fmt_num(frame.time_s)
        self._files["latency.csv"].write(
            f"{t},{frame.latency_count},{_us_to_ms_str(frame.p50_us)},"
            f"{_us_to_ms_str(frame.p95_us)},{_us_to_ms_str(frame.p99_us)},"
            f"{_us_to_ms_str(frame.max_us)},{_us_to_ms_str(frame.p50_from_create_us)}\n"
        )
        cache_f = self._files["cache.csv"]
        for i, (h, m) in enumerate(zip(frame.hits, frame.misses)):
            rate = "" if h + m == 0 else fmt_num(h / (h + m))
            cache_f.write(f"{t},{i},{h},{m},{rate}\n")
        busy_f = self._files["busy.csv"]
        for i, b in enumerate(frame.busy_us):
            busy_f.write(f"{t},{i},{fmt_num(b / 1000.0 / frame.interval_s)}\n")
        self._files["consumed.csv"].write(
            f"{t},{fmt_num(frame.consumed / frame.interval_s)},"
            f"{fmt_num(frame.generated / frame.interval_s)}\n"
        )
        queues_f = self._files["queues.csv"]
        for i, occ in enumerate(frame.queue_occupancy):
            queues_f.write(f"{t},enrich-{i},{occ},{frame.queue_capacity}\n")
        if self._expo is not None:
            self._write_exposition(frame, t)

    def _write_exposition(self, frame: MetricsFrame, t: str) -> None:
        w = self._expo.write
        w(f'consumed_events_per_s{{time_s="{t}"}} {fmt_num(frame.consumed / frame.interval_s)}\n')
        w(f'generated_events_per_s{{time_s="{t}"}} {fmt_num(frame.generated / frame.interval_s)}\n')
        w(f'first_window_latency_count{{time_s="{t}"}} {frame.latency_count}\n')
        for q, v in (("0.5", frame.p50_us), ("0.95", frame.p95_us), ("0.99", frame.p99_us)):
            if v is not None:
                w(f'first_window_latency_ms{{quantile="{q}",time_s="{t}"}} {_us_to_ms_str(v)}\n')
        for i, b in enumerate(frame.busy_us):
            w(f'subtask_busy_ms_per_s{{subtask="{i}",time_s="{t}"}} {fmt_num(b / 1000.0 / frame.interval_s)}\n')
        for i, (h, m) in enumerate(zip(frame.hits, frame.misses)):
            if h + m:
                w(f'cache_hit_rate{{subtask="{i}",time_s="{t}"}} {fmt_num(h / (h + m))}\n')
        for i, occ in enumerate(frame.queue_occupancy):
            w(f'queue_occupancy{{channel="enrich-{i}",time_s="{t}"}} {occ}\n')

    def write_sink_row(
        self,
        window_start_us: int,
        window_end_us: int,
        key: int,
        events: int,
        amount_cents: int,
        suspicious: int,
    ) -> None:
        self._files["sink.csv"].write(
            f"{fmt_num(window_start_us / 1e6)},{fmt_num(window_end_us / 1e6)},"
            f"{key},{events},{amount_cents},{suspicious}\n"
        )

    def close(self) -> None:
        if self.closed:
            return
        for f in self._files.values():
            f.close()
        if self._expo is not None:
            self._expo.close()
        self.closed = True
