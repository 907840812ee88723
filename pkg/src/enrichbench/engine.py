"""The pipeline simulation: sources, enrichment workers, windows, sink.

One ``Run`` wires together a partitioned event stream, a set of enrichment
workers, and sliding-window aggregation, all over the virtual clock:

* Each partition's source wakes at its next event's create time and offers
  the event to the routed worker's bounded inbox.  A full inbox parks the
  source (backpressure); popping from that inbox resumes it.
* A worker serializes work on a busy frontier: per event it charges the
  pipeline overhead, then asks the strategy for the enrichment span.  A
  blocking strategy holds the worker for the span; a pooled one lets the
  worker continue, bounded by the in-flight window.
* Events join their windows by create time once enrichment completes.  A
  window boundary fires only when the clock has passed it, every partition
  has ingested beyond it, and no event created before it is still ingested
  but un-windowed — so a pane always contains exactly the events that
  belong to it, regardless of strategy, load, or replay.  Firing charges a
  fixed pane cost on each owning worker (plus per-service model scoring
  for the request-log pipeline) and emits the per-key rows.
* An event's first-window latency is recorded at the emit of the earliest
  window containing it, against both its ingest and create times.

Checkpoints snapshot source offsets and RNG states, window panes, and
queued/in-flight events.  A failure drops all workers: transient state
(inboxes, in-process caches, model sessions) is lost, and after the restart
delay the run restores the snapshot and replays forward.  Sink rows are
deduplicated by (window, key) across replays, so a failed-and-recovered run
emits exactly the rows a clean run emits.

Hot-path note: worker inboxes drain in an inline loop per dispatch and the
pane/first-sample maps are flat dicts keyed ``window_index * parallelism +
worker``; both are pure speedups — busy frontiers, admission order, and
emitted values are identical to the one-callback-per-step formulation.
"""

from __future__ import annotations

import copy
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

from .enrichment import (
    AsyncStrategy,
    EmbeddedStateStrategy,
    ExternalCacheStrategy,
    LocalCacheStrategy,
    ModelSessionCache,
    ModelSessionStrategy,
    PartitionedLocalCacheStrategy,
    RuntimeAbort,
    STRATEGY_KINDS,
    StrategyConfigError,
    SyncStrategy,
)
from .metrics import CsvSink, FirstWindowTracker, LatencyHistogram, MetricsFrame
from .partitioning import Partitioner, fnv1a64, key_bytes_for_account
from .services import CacheService, ObjectStore, TableStore
from .simkernel import RandomStreams, Scheduler, constant
from .windows import WindowSpec
from .workloads import (
    RateSchedule,
    make_fraud_sources,
    make_log_sources,
    seed_historical,
)

__all__ = [
    "EngineParams",
    "FailureSpec",
    "FailureBeyondHorizon",
    "Run",
    "RunResult",
]


class FailureBeyondHorizon(ValueError):
    """A configured failure (or its restart) does not fit inside the run."""


@dataclass(frozen=True)
class FailureSpec:
    fail_at_s: float
    restart_delay_s: float


@dataclass
class EngineParams:
    """Everything a single run needs.  Times are seconds or milliseconds as
    suffixed; the engine works in integer microseconds internally."""

    horizon_s: float
    schedule: RateSchedule
    seed: int = 1
    parallelism: int = 8
    workload: str = "fraud"
    arrival_mode: str = "poisson"
    # fraud workload
    n_accounts: int = 24_000
    known_receiver_prob: float = 0.98
    known_device_prob: float = 0.99
    known_location_prob: float = 0.98
    amount_mu: float = 3.0
    amount_sigma: float = 1.0
    # log workload
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
    # enrichment
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
    # services
    table_service_ms: float = 4.0
    table_concurrency: int = 128
    cache_service_ms: float = 0.5
    cache_concurrency: int = 256
    # pipeline shape
    window_size_s: float = 10.0
    window_slide_s: float = 5.0
    pane_cost_ms: float = 20.0
    overhead_ms: float = 0.3
    queue_capacity: int = 1000
    checkpoint_interval_s: float = 600.0
    reporting_interval_s: float = 15.0
    failures: tuple[FailureSpec, ...] = ()
    # outputs
    emit_sink: bool = False
    emit_exposition: bool = False
    capture: bool = False


@dataclass
class RunResult:
    frames: list[MetricsFrame]
    tracker: FirstWindowTracker
    offered_total: int
    ingested_total: int
    consumed_total: int
    hits: list[int]
    misses: list[int]
    sink_rows_written: int
    boundaries_fired: int
    post_restart_outcomes: list[list[bool | None]]
    final_inbox_depth: int
    final_in_flight: int
    aborted: bool = False
    abort_reason: str | None = None
    out_dir: Path | None = None
    csv_names: list[str] = field(default_factory=list)
    scorer_cold: int = 0
    scorer_warm: int = 0

    @property
    def capture(self):
        return self.tracker.capture


def _us(seconds: float) -> int:
    return round(seconds * 1e6)


def _ms_us(ms: float) -> int:
    return round(ms * 1000)


class Run:
    """One simulated pipeline execution."""

    def __init__(self, params: EngineParams, out_dir: str | Path | None = None):
        p = params
        self.p = p
        self._validate(p)

        self.sched = Scheduler()
        self.streams = RandomStreams(p.seed)
        self.horizon_us = _us(p.horizon_s)
        self.n = p.parallelism
        self.overhead_us = _ms_us(p.overhead_ms)
        self.pane_cost_us = _ms_us(p.pane_cost_ms)
        self.frame_us = _us(p.reporting_interval_s)
        self.queue_capacity = p.queue_capacity
        self.max_in_flight = p.max_in_flight
        self.async_ordered = p.async_ordered
        self.window_spec = WindowSpec(_us(p.window_size_s), _us(p.window_slide_s))
        self.slide_us = self.window_spec.slide_us
        self.panes_per_event = self.window_spec.panes_per_event

        # Services and reference data.
        self.tables = TableStore(
            constant(p.table_service_ms),
            p.table_concurrency,
            self.streams.stream("datasource"),
        )
        self.cache_service: CacheService | None = None
        self.scorer: ModelSessionCache | None = None
        if p.workload == "fraud":
            seed_historical(self.tables, p.n_accounts)
            self.sources = make_fraud_sources(
                self.streams,
                self.n,
                p.schedule,
                p.arrival_mode,
                p.n_accounts,
                p.known_receiver_prob,
                p.known_device_prob,
                p.known_location_prob,
                p.amount_mu,
                p.amount_sigma,
            )
        else:
            store = ObjectStore(
                p.object_store_concurrency, self.streams.stream("object-store")
            )
            store.register_blob(p.model_name, p.blob_size_bytes, constant(p.fetch_ms))
            self.scorer = ModelSessionCache(
                store,
                _ms_us(p.session_init_ms),
                _ms_us(p.predict_ms),
                p.model_size_mb,
                p.session_memory_budget_mb,
            )
            self.sources = make_log_sources(
                self.streams, self.n, p.schedule, p.arrival_mode, p.n_services
            )

        self.partitioner = Partitioner(p.routing, self.n)
        self._hash_route: dict[int, int] = {}
        self.strategy = self._build_strategy()
        self.blocking = self.strategy.blocking

        # Worker state.
        self.inboxes: list[deque] = [deque() for _ in range(self.n)]
        self.busy_until = [0] * self.n
        self.worker_busy = [False] * self.n
        self.waiting_pool = [False] * self.n
        self.in_flight = [0] * self.n
        self.unapplied = [0] * self.n
        self.track_events = bool(p.failures)
        self.in_flight_events: list[dict] = [{} for _ in range(self.n)]
        self.last_apply = [0] * self.n
        self.parked_by_inbox: list[set[int]] = [set() for _ in range(self.n)]
        self.epoch = 0
        self.failed = False

        # Window state, keyed window_end_index * parallelism + worker.
        self.panes: dict[int, dict[int, list]] = {}
        self.first_events: dict[int, object] = {}
        self.keyed_firsts = self.scorer is not None
        self.inflight_buckets: dict[int, int] = {}
        self.next_boundary = self.slide_us
        self.timer_at: int | None = None
        self._worker_memo: dict[int, int] = {}

        # Accounting.
        self.tracker = FirstWindowTracker(dedup=self.track_events, capture=p.capture)
        self.frames: list[MetricsFrame] = []
        self.lat_frames: dict[int, tuple[LatencyHistogram, LatencyHistogram]] = {}
        self.busy_frames: dict[int, list[int]] = {}
        self.hits_acc = [0] * self.n
        self.misses_acc = [0] * self.n
        self.hits_total = [0] * self.n
        self.misses_total = [0] * self.n
        self.consumed_acc = 0
        self.n_ingested = 0
        self.n_applied = 0
        self.boundaries_fired = 0
        self.sink_rows_written = 0
        self.dedup_sink = self.track_events and p.emit_sink
        self._sink_seen_new: set = set()
        self._sink_seen_old: set = set()
        self.post_restart_outcomes: list[list[bool | None]] = []
        self._await_first = [False] * self.n
        self.snapshot: dict | None = None

        self.out_dir = None if out_dir is None else Path(out_dir)
        self.csv = (
            None
            if self.out_dir is None
            else CsvSink(self.out_dir, p.emit_sink, p.emit_exposition)
        )

    # --- construction -----------------------------------------------------

    @staticmethod
    def _validate(p: EngineParams) -> None:
        if p.horizon_s <= 0:
            raise ValueError("horizon must be positive")
        if p.parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        if p.queue_capacity < 1:
            raise ValueError("queue_capacity must be >= 1")
        if p.workload not in ("fraud", "log"):
            raise ValueError(f"unknown workload {p.workload!r}")
        if p.strategy not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {p.strategy!r}")
        if (p.workload == "log") != (p.strategy == "model_session"):
            raise StrategyConfigError(
                "the log workload pairs with the model_session strategy and "
                "the fraud workload with the lookup strategies"
            )
        horizon_us = _us(p.horizon_s)
        prev_restart = 0
        for f in p.failures:
            fail_us = _us(f.fail_at_s)
            restart_us = fail_us + _us(f.restart_delay_s)
            if fail_us >= horizon_us or restart_us >= horizon_us:
                raise FailureBeyondHorizon(
                    f"failure at {f.fail_at_s}s (restart by "
                    f"{f.fail_at_s + f.restart_delay_s}s) must complete before "
                    f"the {p.horizon_s}s horizon"
                )
            if fail_us < prev_restart:
                raise ValueError("failures overlap a pending restart")
            prev_restart = restart_us

    def _build_strategy(self):
        p = self.p
        kind = p.strategy
        access_us = _ms_us(p.local_access_ms)
        if kind == "sync":
            return SyncStrategy(self.tables, p.sync_sequential)
        if kind == "async":
            return AsyncStrategy(self.tables)
        if kind == "local_cache":
            return LocalCacheStrategy(
                self.tables, self.n, p.local_cache_capacity, access_us
            )
        if kind == "partitioned_local_cache":
            return PartitionedLocalCacheStrategy(
                self.tables, self.n, p.local_cache_capacity, access_us, p.routing
            )
        if kind == "external_cache":
            self.cache_service = CacheService(
                constant(p.cache_service_ms),
                p.cache_concurrency,
                p.external_cache_capacity,
                self.streams.stream("cache-service"),
            )
            return ExternalCacheStrategy(self.tables, self.cache_service)
        if kind == "embedded_state":
            return EmbeddedStateStrategy(p.embedded_records, p.bootstrap_rate)
        return ModelSessionStrategy(self.scorer)

    # --- routing ----------------------------------------------------------

    def _route(self, key: int) -> int:
        """Subtask for an event key under the configured routing policy."""
        part = self.partitioner
        if part.kind == "key_hash":
            w = self._hash_route.get(key)
            if w is None:
                w = part.route(key_bytes_for_account(key))
                self._hash_route[key] = w
            return w
        return part.route(b"", key)

    def _window_worker(self, key: int) -> int:
        w = self._worker_memo.get(key)
        if w is None:
            w = fnv1a64(key_bytes_for_account(key)) % self.n
            self._worker_memo[key] = w
        return w

    # --- sources ----------------------------------------------------------

    def _source_wake(self, p: int, epoch: int) -> None:
        if epoch != self.epoch:
            return
        src = self.sources[p]
        now = self.sched.now
        capacity = self.queue_capacity
        inboxes = self.inboxes
        slide = self.slide_us
        buckets = self.inflight_buckets
        busy = self.worker_busy
        waiting = self.waiting_pool
        ingested = False
        parked = False
        while True:
            ev = src.pending
            if ev is None or ev.create_us > now:
                break
            target = self._route(ev.key)
            inbox = inboxes[target]
            if len(inbox) >= capacity:
                self.parked_by_inbox[target].add(p)
                parked = True
                break
            src.pop()
            ingested = True
            self.n_ingested += 1
            bucket = ev.create_us // slide
            buckets[bucket] = buckets.get(bucket, 0) + 1
            inbox.append((ev, now))
            if not busy[target] and not waiting[target]:
                busy[target] = True
                self._worker_step(target, epoch)
        # Advancing this source may have moved the ingest watermark past a
        # boundary that was waiting on it.
        if ingested and now >= self.next_boundary:
            self._try_fire()
        if not parked and ev is not None:
            self.sched.schedule(ev.create_us, self._source_wake, p, epoch)

    def _resume_parked(self, i: int) -> None:
        waiting = self.parked_by_inbox[i]
        if waiting:
            now = self.sched.now
            schedule = self.sched.schedule
            sources = self.sources
            # Oldest head event first: freed slots go to the source that has
            # been blocked longest, so no partition can starve the watermark.
            for p in sorted(waiting, key=lambda p: (sources[p].pending.create_us, p)):
                schedule(now, self._source_wake, p, self.epoch)
            waiting.clear()

    # --- workers ----------------------------------------------------------

    def _worker_step(self, i: int, epoch: int) -> None:
        if epoch != self.epoch:
            return
        inbox = self.inboxes[i]
        if not inbox:
            self.worker_busy[i] = False
            return
        strategy = self.strategy
        sched = self.sched
        now = sched.now
        ov = self.overhead_us
        busy = self.busy_until[i]
        fu = self.frame_us
        busy_frames = self.busy_frames
        n = self.n

        if self.blocking:
            # One event per dispatch; the completion continues the chain.
            ev, ingest_us = inbox.popleft()
            if self.parked_by_inbox[i]:
                self._resume_parked(i)
            start = busy if busy > now else now
            t0 = start + ov
            done, hit = strategy.enrich(i, ev.key, t0)
            self._charge(i, start, done)
            self.busy_until[i] = done
            self._note_outcome(i, hit)
            self.unapplied[i] += 1
            if self.track_events:
                self.in_flight_events[i][ev.id] = ev
            sched.schedule(done, self._complete_blocking, i, ev, ingest_us, epoch)
            return

        # Pooled: drain the backlog in one dispatch.  Busy frontiers, issue
        # times, and pool checks are identical to stepping via one callback
        # per event, because only completions (which re-kick via the waiting
        # flag) can unblock a full pool.
        pool = self.in_flight[i]
        maxp = self.max_in_flight
        schedule = sched.schedule
        complete = self._complete
        track = self.track_events
        inflight_ev = self.in_flight_events[i]
        await_first = self._await_first
        ordered = self.async_ordered
        popped = hit_count = miss_count = 0
        while inbox:
            if pool >= maxp:
                self.worker_busy[i] = False
                self.waiting_pool[i] = True
                break
            ev, ingest_us = inbox.popleft()
            popped += 1
            start = busy if busy > now else now
            t0 = start + ov
            # Charge [start, t0) busy; overhead spans never cross a frame
            # boundary unless start sits within overhead_us of one.
            idx = start // fu
            if t0 <= (idx + 1) * fu:
                row = busy_frames.get(idx)
                if row is None:
                    busy_frames[idx] = row = [0] * n
                row[i] += t0 - start
            else:
                self._charge(i, start, t0)
            busy = t0
            done, hit = strategy.enrich(i, ev.key, t0)
            if hit is not None:
                if hit:
                    hit_count += 1
                else:
                    miss_count += 1
            if await_first[i]:
                await_first[i] = False
                self.post_restart_outcomes[-1][i] = hit
            if track:
                inflight_ev[ev.id] = ev
            pool += 1
            if ordered:
                # Results commit in issue order: a fast result waits for
                # earlier slow ones, and its pool slot stays held meanwhile.
                apply_at = self.last_apply[i]
                if done > apply_at:
                    apply_at = done
                self.last_apply[i] = apply_at
                schedule(apply_at, complete, i, ev, ingest_us, done, epoch)
            else:
                schedule(done, complete, i, ev, ingest_us, done, epoch)
        else:
            self.worker_busy[i] = False
        self.in_flight[i] = pool
        self.unapplied[i] += popped
        self.busy_until[i] = busy
        if hit_count:
            self.hits_acc[i] += hit_count
            self.hits_total[i] += hit_count
        if miss_count:
            self.misses_acc[i] += miss_count
            self.misses_total[i] += miss_count
        if popped and self.parked_by_inbox[i]:
            self._resume_parked(i)

    def _note_outcome(self, i: int, hit: bool | None) -> None:
        if self._await_first[i]:
            self._await_first[i] = False
            self.post_restart_outcomes[-1][i] = hit
        if hit is not None:
            if hit:
                self.hits_acc[i] += 1
                self.hits_total[i] += 1
            else:
                self.misses_acc[i] += 1
                self.misses_total[i] += 1

    def _complete_blocking(self, i, ev, ingest_us, epoch) -> None:
        if epoch != self.epoch:
            return
        now = self.sched.now
        self.strategy.on_complete(i, ev.key, now)
        self._apply(i, ev, ingest_us, now)
        self._worker_step(i, epoch)

    def _complete(self, i, ev, ingest_us, done, epoch) -> None:
        """Runs at the apply instant (the I/O completion, or later under
        ordered delivery); ``done`` is when the enrichment itself finished."""
        if epoch != self.epoch:
            return
        self.strategy.on_complete(i, ev.key, done)
        self.in_flight[i] -= 1
        if self.waiting_pool[i]:
            self.waiting_pool[i] = False
            self.worker_busy[i] = True
            self._worker_step(i, epoch)
        self._apply(i, ev, ingest_us, self.sched.now)

    def _apply(self, i, ev, ingest_us, t) -> None:
        if self.track_events:
            del self.in_flight_events[i][ev.id]
        self.unapplied[i] -= 1
        self.n_applied += 1
        self.consumed_acc += 1

        event_id, _, create_us, key, flags, amount_cents = ev
        slide = self.slide_us
        n = self.n
        bucket = create_us // slide
        buckets = self.inflight_buckets
        left = buckets[bucket] - 1
        if left:
            buckets[bucket] = left
        else:
            del buckets[bucket]

        # Insert into every window containing the event; record the first
        # sample against the earliest-ending one.
        w = self._worker_memo.get(key)
        if w is None:
            w = self._window_worker(key)
        suspicious = 1 if flags else 0
        panes = self.panes
        fk = (bucket + 1) * n + w
        for _ in range(self.panes_per_event):
            group = panes.get(fk)
            if group is None:
                panes[fk] = {key: [1, amount_cents, suspicious]}
            else:
                agg = group.get(key)
                if agg is None:
                    group[key] = [1, amount_cents, suspicious]
                else:
                    agg[0] += 1
                    agg[1] += amount_cents
                    agg[2] += suspicious
            fk += n
        fk = (bucket + 1) * n + w
        sample = (event_id, ingest_us, create_us)
        firsts = self.first_events.get(fk)
        if self.keyed_firsts:
            if firsts is None:
                self.first_events[fk] = {key: [sample]}
            else:
                per_key = firsts.get(key)
                if per_key is None:
                    firsts[key] = [sample]
                else:
                    per_key.append(sample)
        else:
            if firsts is None:
                self.first_events[fk] = [sample]
            else:
                firsts.append(sample)

        # The pane gate can only newly open when a pre-boundary bucket fully
        # drains (or the watermark moves, handled on the source path).
        if not left and t >= self.next_boundary:
            self._try_fire()

    # --- window firing ----------------------------------------------------

    def _watermark_us(self) -> float:
        wm = math.inf
        for src in self.sources:
            ev = src.pending
            if ev is not None and ev.create_us < wm:
                wm = ev.create_us
        return wm

    def _gate_open(self, boundary: int) -> bool:
        if self._watermark_us() < boundary:
            return False
        cutoff = boundary // self.slide_us
        return all(b >= cutoff for b in self.inflight_buckets)

    def _boundary_timer(self, boundary: int, epoch: int) -> None:
        if epoch != self.epoch:
            return
        if self.timer_at == boundary:
            self.timer_at = None
        self._try_fire()

    def _try_fire(self) -> None:
        now = self.sched.now
        while self.next_boundary <= now and self._gate_open(self.next_boundary):
            self._fire_boundary(self.next_boundary)
            self.next_boundary += self.slide_us
        nb = self.next_boundary
        if nb > now and self.timer_at != nb:
            self.timer_at = nb
            self.sched.schedule(nb, self._boundary_timer, nb, self.epoch)

    def _fire_boundary(self, boundary: int) -> None:
        self.boundaries_fired += 1
        now = self.sched.now
        n = self.n
        base = (boundary // self.slide_us) * n
        size_us = self.window_spec.size_us
        window_start = boundary - size_us
        panes = self.panes
        first_events = self.first_events
        pane_cost = self.pane_cost_us
        scorer = self.scorer
        for w in range(n):
            group = panes.pop(base + w, None)
            firsts = first_events.pop(base + w, None)
            if group is None:
                continue
            busy = self.busy_until[w]
            start = busy if busy > now else now
            cursor = start + pane_cost
            self._charge(w, start, cursor)
            if scorer is None:
                for key in sorted(group):
                    self._emit_pane(boundary, window_start, key, group[key], cursor)
                if firsts:
                    self._record_batch(firsts, cursor)
            else:
                model = self.p.model_name
                for key in sorted(group):
                    scored_at, _cold = scorer.score(key, model, cursor)
                    self._charge(w, cursor, scored_at)
                    cursor = scored_at
                    self._emit_pane(boundary, window_start, key, group[key], cursor)
                    if firsts:
                        samples = firsts.get(key)
                        if samples:
                            self._record_batch(samples, cursor)
            if cursor > self.busy_until[w]:
                self.busy_until[w] = cursor

    def _emit_pane(self, boundary, window_start, key, agg, emit_us) -> None:
        if self.csv is None or not self.p.emit_sink:
            return
        if self.dedup_sink:
            dk = (boundary, key)
            if dk in self._sink_seen_new or dk in self._sink_seen_old:
                return
            self._sink_seen_new.add(dk)
        self.csv.write_sink_row(window_start, boundary, key, agg[0], agg[1], agg[2])
        self.sink_rows_written += 1

    def _record_batch(self, samples, emit_us) -> None:
        """Record first-window samples for one worker's pane group, all of
        which share the same emit instant."""
        idx = emit_us // self.frame_us
        pair = self.lat_frames.get(idx)
        if pair is None:
            pair = (LatencyHistogram(), LatencyHistogram())
            self.lat_frames[idx] = pair
        hist, hist_create = pair
        record = self.tracker.record
        h_rec = hist.record
        hc_rec = hist_create.record
        for event_id, ingest_us, create_us in samples:
            if record(event_id, ingest_us, create_us, emit_us):
                h_rec(emit_us - ingest_us)
                hc_rec(emit_us - create_us)

    # --- accounting -------------------------------------------------------

    def _charge(self, i: int, start: int, end: int) -> None:
        if end <= start:
            return
        fu = self.frame_us
        busy_frames = self.busy_frames
        idx = start // fu
        n = self.n
        while start < end:
            seg_end = (idx + 1) * fu
            if seg_end > end:
                seg_end = end
            row = busy_frames.get(idx)
            if row is None:
                busy_frames[idx] = row = [0] * n
            row[i] += seg_end - start
            start = seg_end
            idx += 1

    def _emit_frame(self, frame_end: int, idx: int) -> None:
        frame_start = idx * self.frame_us
        interval_s = (frame_end - frame_start) / 1e6
        pair = self.lat_frames.pop(idx, None)
        if pair is None or pair[0].count == 0:
            count = 0
            p50 = p95 = p99 = mx = p50c = None
        else:
            hist, hist_create = pair
            count = hist.count
            p50 = hist.quantile_us(0.5)
            p95 = hist.quantile_us(0.95)
            p99 = hist.quantile_us(0.99)
            mx = hist.max_us
            p50c = hist_create.quantile_us(0.5)
        frame = MetricsFrame(
            time_s=frame_end / 1e6,
            interval_s=interval_s,
            latency_count=count,
            p50_us=p50,
            p95_us=p95,
            p99_us=p99,
            max_us=mx,
            p50_from_create_us=p50c,
            consumed=self.consumed_acc,
            generated=self.p.schedule.count_between(frame_start, frame_end),
            hits=list(self.hits_acc),
            misses=list(self.misses_acc),
            busy_us=self.busy_frames.pop(idx, None) or [0] * self.n,
            queue_occupancy=[len(q) for q in self.inboxes],
            queue_capacity=self.queue_capacity,
        )
        self.frames.append(frame)
        if self.csv is not None:
            self.csv.write_frame(frame)
        self.consumed_acc = 0
        self.hits_acc = [0] * self.n
        self.misses_acc = [0] * self.n
        if frame_end < self.horizon_us:
            next_end = frame_end + self.frame_us
            if next_end > self.horizon_us:
                next_end = self.horizon_us
            self.sched.schedule(next_end, self._emit_frame, next_end, idx + 1)

    # --- checkpoints and failures ----------------------------------------

    def _checkpoint(self, t: int) -> None:
        if not self.failed:
            self.tracker.rotate_seen()
            if self.dedup_sink:
                self._sink_seen_old = self._sink_seen_new
                self._sink_seen_new = set()
            if self.p.failures:
                self.snapshot = self._take_snapshot()
        nxt = t + _us(self.p.checkpoint_interval_s)
        if nxt < self.horizon_us:
            self.sched.schedule(nxt, self._checkpoint, nxt)

    def _take_snapshot(self) -> dict:
        snap = {
            "sources": [s.snapshot() for s in self.sources],
            "panes": copy.deepcopy(self.panes),
            "firsts": copy.deepcopy(self.first_events),
            "buckets": dict(self.inflight_buckets),
            "next_boundary": self.next_boundary,
            "partitioner": self.partitioner.state(),
            "inflight": [list(d.values()) for d in self.in_flight_events],
            "inboxes": [[ev for ev, _ in q] for q in self.inboxes],
        }
        if isinstance(self.strategy, EmbeddedStateStrategy):
            snap["embedded"] = self.strategy.snapshot(self.sched.now)
        return snap

    def _fail(self, spec: FailureSpec) -> None:
        self.failed = True
        self.epoch += 1
        for q in self.inboxes:
            q.clear()
        for s in self.parked_by_inbox:
            s.clear()
        self.in_flight = [0] * self.n
        self.unapplied = [0] * self.n
        self.in_flight_events = [{} for _ in range(self.n)]
        self.worker_busy = [False] * self.n
        self.waiting_pool = [False] * self.n
        self.last_apply = [0] * self.n
        self.strategy.drop_transient()
        self.panes.clear()
        self.first_events.clear()
        self.inflight_buckets.clear()
        self.timer_at = None
        restart_at = _us(spec.fail_at_s) + _us(spec.restart_delay_s)
        self.sched.schedule(restart_at, self._restart)

    def _restart(self) -> None:
        snap = self.snapshot
        now = self.sched.now
        for src, state in zip(self.sources, snap["sources"]):
            src.restore(state)
        self.panes = copy.deepcopy(snap["panes"])
        self.first_events = copy.deepcopy(snap["firsts"])
        self.inflight_buckets = dict(snap["buckets"])
        self.next_boundary = snap["next_boundary"]
        self.partitioner.restore(snap["partitioner"])
        if "embedded" in snap:
            self.strategy.restore(snap["embedded"], now)
        for i in range(self.n):
            replayed = snap["inflight"][i] + snap["inboxes"][i]
            self.inboxes[i] = deque((ev, now) for ev in replayed)
            self.unapplied[i] = 0
            self.busy_until[i] = now
        self.failed = False
        self.post_restart_outcomes.append([None] * self.n)
        self._await_first = [True] * self.n
        epoch = self.epoch
        for p, src in enumerate(self.sources):
            if src.pending is not None:
                self.sched.schedule(
                    max(now, src.pending.create_us), self._source_wake, p, epoch
                )
        for i in range(self.n):
            if self.inboxes[i]:
                self.worker_busy[i] = True
                self.sched.schedule(now, self._worker_step, i, epoch)
        self._try_fire()

    def _flush_sessions(self, t: int) -> None:
        if not self.failed:
            self.scorer.flush()
        nxt = t + _us(self.p.flush_interval_s)
        if nxt < self.horizon_us:
            self.sched.schedule(nxt, self._flush_sessions, nxt)

    # --- run --------------------------------------------------------------

    def run(self) -> RunResult:
        p = self.p
        epoch = self.epoch
        for part, src in enumerate(self.sources):
            if src.pending is not None:
                self.sched.schedule(
                    src.pending.create_us, self._source_wake, part, epoch
                )
        first_frame = min(self.frame_us, self.horizon_us)
        self.sched.schedule(first_frame, self._emit_frame, first_frame, 0)
        cp_us = _us(p.checkpoint_interval_s)
        if cp_us < self.horizon_us:
            self.sched.schedule(cp_us, self._checkpoint, cp_us)
        if p.failures:
            self.snapshot = self._take_snapshot()
            for spec in p.failures:
                self.sched.schedule(_us(spec.fail_at_s), self._fail, spec)
        if self.scorer is not None:
            flush_us = _us(p.flush_interval_s)
            if flush_us < self.horizon_us:
                self.sched.schedule(flush_us, self._flush_sessions, flush_us)
        self._try_fire()

        aborted = False
        abort_reason = None
        try:
            self.sched.run_until(self.horizon_us)
        except RuntimeAbort as exc:
            aborted = True
            abort_reason = str(exc)
        finally:
            if self.csv is not None:
                self.csv.close()

        return RunResult(
            frames=self.frames,
            tracker=self.tracker,
            offered_total=p.schedule.count_between(0, self.horizon_us),
            ingested_total=self.n_ingested,
            consumed_total=self.n_applied,
            hits=list(self.hits_total),
            misses=list(self.misses_total),
            sink_rows_written=self.sink_rows_written,
            boundaries_fired=self.boundaries_fired,
            post_restart_outcomes=self.post_restart_outcomes,
            final_inbox_depth=sum(len(q) for q in self.inboxes),
            final_in_flight=sum(self.unapplied),
            aborted=aborted,
            abort_reason=abort_reason,
            out_dir=self.out_dir,
            csv_names=[] if self.csv is None else self.csv.csv_names(),
            scorer_cold=0 if self.scorer is None else self.scorer.cold_scores,
            scorer_warm=0 if self.scorer is None else self.scorer.warm_scores,
        )
