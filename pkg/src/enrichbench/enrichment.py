"""Per-event enrichment strategies and their cost models.

Every transaction event needs the sending account's reference bundle: its
registered counterparties, devices, and usual locations.  The three records
live in separate tables, and a remote enrichment issues one single-key query
per table concurrently, so the remote span is the max of three trips.  The
strategies differ in who waits and what is cached:

* ``sync``       blocks the worker for the full span (one event in flight).
* ``async``      returns immediately; completions land out of band, bounded
                 by a per-subtask in-flight window.
* ``local_cache``            async fallback plus a per-subtask in-process
                             bundle cache (hit costs one local access).
* ``partitioned_local_cache``  same cache, but refuses non-key-affine
                               routing, since its point is that each subtask
                               only ever sees its own slice of the keyspace.
* ``external_cache``  shared cache service in front of the tables; a miss
                      reads the tables and writes the bundle back off the
                      critical path.
* ``embedded_state``  reference data lives in operator state; lookups are
                      in-process and cost grows with the log of the record
                      count.  State is filled by a bootstrap side stream at
                      a fixed record rate; an event whose record has not
                      arrived yet holds the worker until it does.
* ``model_session``   pass-through per event; scoring happens per window
                      pane through a session cache (see ModelSessionCache).

Whether an event is suspicious is decided by comparing its fields against
the fetched bundle, which every strategy resolves identically — strategy
choice moves latency, never results.
"""

from __future__ import annotations

import math
from typing import Any

from .services import MISS, CacheService, LruCache, ObjectStore, TableStore

__all__ = [
    "FLAG_UNKNOWN_RECEIVER",
    "FLAG_UNKNOWN_DEVICE",
    "FLAG_UNKNOWN_LOCATION",
    "TABLES",
    "STRATEGY_KINDS",
    "StrategyConfigError",
    "RuntimeAbort",
    "derive_suspicion_flags",
    "flag_names",
    "SyncStrategy",
    "AsyncStrategy",
    "LocalCacheStrategy",
    "PartitionedLocalCacheStrategy",
    "ExternalCacheStrategy",
    "EmbeddedStateStrategy",
    "ModelSessionStrategy",
    "ModelSessionCache",
    "embedded_lookup_us",
]

FLAG_UNKNOWN_RECEIVER = 1
FLAG_UNKNOWN_DEVICE = 2
FLAG_UNKNOWN_LOCATION = 4

_FLAG_LABELS = (
    (FLAG_UNKNOWN_RECEIVER, "unknown_receiver"),
    (FLAG_UNKNOWN_DEVICE, "unknown_device"),
    (FLAG_UNKNOWN_LOCATION, "unknown_location"),
)

TABLES = ("receiver_accounts", "device_registry", "location_history")

STRATEGY_KINDS = (
    "sync",
    "async",
    "local_cache",
    "partitioned_local_cache",
    "external_cache",
    "embedded_state",
    "model_session",
)

# Marker stored as the cached bundle; the bundle's content never changes an
# outcome (reference tables are static within a run), only its presence does.
_BUNDLE = True


class StrategyConfigError(ValueError):
    """A strategy was combined with settings it cannot work under."""


class RuntimeAbort(RuntimeError):
    """An unrecoverable condition (e.g. session memory exhausted)."""


def derive_suspicion_flags(
    receiver_known: bool, device_known: bool, location_known: bool
) -> int:
    """Bitmask of anomaly flags; an event is suspicious iff nonzero."""
    flags = 0
    if not receiver_known:
        flags |= FLAG_UNKNOWN_RECEIVER
    if not device_known:
        flags |= FLAG_UNKNOWN_DEVICE
    if not location_known:
        flags |= FLAG_UNKNOWN_LOCATION
    return flags


def flag_names(flags: int) -> tuple[str, ...]:
    return tuple(name for bit, name in _FLAG_LABELS if flags & bit)


class _TableBacked:
    """Shared plumbing for strategies that read the reference tables."""

    def __init__(self, tables: TableStore) -> None:
        self.tables = tables

    def _fetch_bundle(self, account: int, t0: int) -> int:
        """Issue the three single-key queries concurrently; returns last trip."""
        return self.tables.query_span(t0, len(TABLES))

    def _fetch_bundle_sequential(self, account: int, t0: int) -> int:
        t = t0
        for table in TABLES:
            t, _ = self.tables.query(table, account, t)
        return t

    # Hooks with no default behavior; cache-bearing subclasses override.
    def on_complete(self, subtask: int, account: int, done_at: int) -> None:
        pass

    def drop_transient(self) -> None:
        pass


class SyncStrategy(_TableBacked):
    """One event in flight per subtask; the worker waits out the span."""

    blocking = True
    uses_pool = False

    def __init__(self, tables: TableStore, sequential: bool = False) -> None:
        super().__init__(tables)
        self.sequential = sequential

    def enrich(self, subtask: int, account: int, t0: int) -> tuple[int, None]:
        if self.sequential:
            return self._fetch_bundle_sequential(account, t0), None
        return self._fetch_bundle(account, t0), None


class AsyncStrategy(_TableBacked):
    """Fire the queries and move on; the in-flight window caps exposure."""

    blocking = False
    uses_pool = True

    def enrich(self, subtask: int, account: int, t0: int) -> tuple[int, None]:
        return self._fetch_bundle(account, t0), None


class LocalCacheStrategy(_TableBacked):
    """Async lookups behind a per-subtask in-process bundle cache.

    A hit serves the whole bundle for one local access; a miss costs exactly
    the async span, and the bundle enters the cache when the lookups land
    (not when they are issued, so an overlapping event for the same account
    still misses).
    """

    blocking = False
    uses_pool = True

    def __init__(
        self,
        tables: TableStore,
        n_subtasks: int,
        capacity: int,
        access_us: int,
    ) -> None:
        super().__init__(tables)
        self.caches = [LruCache(capacity) for _ in range(n_subtasks)]
        self.access_us = access_us

    def enrich(self, subtask: int, account: int, t0: int) -> tuple[int, bool]:
        if self.caches[subtask].get(account) is not MISS:
            return t0 + self.access_us, True
        return self._fetch_bundle(account, t0), False

    def on_complete(self, subtask: int, account: int, done_at: int) -> None:
        self.caches[subtask].put(account, _BUNDLE)

    def drop_transient(self) -> None:
        for cache in self.caches:
            cache.clear()


class PartitionedLocalCacheStrategy(LocalCacheStrategy):
    """Local caching that insists on key-affine routing upstream."""

    def __init__(
        self,
        tables: TableStore,
        n_subtasks: int,
        capacity: int,
        access_us: int,
        routing: str,
    ) -> None:
        if routing not in ("key_hash", "custom_map"):
            raise StrategyConfigError(
                "partitioned_local_cache requires key-affine routing "
                f"(key_hash or custom_map), got {routing!r}"
            )
        super().__init__(tables, n_subtasks, capacity, access_us)


class ExternalCacheStrategy(_TableBacked):
    """Shared cache service consulted first; misses read through the tables.

    The write-back is issued at miss completion and is not waited on, so it
    never extends the event's span.
    """

    blocking = False
    uses_pool = True

    def __init__(self, tables: TableStore, cache: CacheService) -> None:
        super().__init__(tables)
        self.cache = cache

    def enrich(self, subtask: int, account: int, t0: int) -> tuple[int, bool]:
        got_at, value = self.cache.cache_get(account, t0)
        if value is not MISS:
            return got_at, True
        return self._fetch_bundle(account, got_at), False

    def on_complete(self, subtask: int, account: int, done_at: int) -> None:
        self.cache.cache_put(account, _BUNDLE, done_at)

    def drop_transient(self) -> None:
        # The cache service runs outside the workers; it keeps its contents
        # across a worker failure, unlike the in-process caches.
        pass


def embedded_lookup_us(n_records: int) -> int:
    """In-process bundle read; grows with the log of the state size."""
    return round(20 + 5 * math.log2(max(n_records, 2)))


class EmbeddedStateStrategy:
    """Reference data held in operator state, filled by a bootstrap stream.

    Record ``k`` of ``n_records`` arrives on the side stream at a fixed
    record rate; an event for a not-yet-loaded account holds its worker
    until the record lands (only possible during the initial backfill).
    The loaded records are part of operator state: they survive a failure
    through the snapshot, and any still-unloaded tail resumes from the
    restore point rather than from scratch.
    """

    blocking = True
    uses_pool = False

    def __init__(self, n_records: int, bootstrap_rate: float = 50_000.0) -> None:
        if n_records < 1:
            raise StrategyConfigError("embedded state needs at least one record")
        self.n_records = n_records
        self.lookup_us = embedded_lookup_us(n_records)
        self._spacing_us = 1e6 / bootstrap_rate
        # Records before _base_k follow the original schedule; later ones
        # restart from _base_t (both shift only after a restore).
        self._base_k = n_records
        self._base_t = 0

    def record_available_us(self, account: int) -> int:
        if account < self._base_k:
            return math.floor(account * self._spacing_us)
        return self._base_t + math.floor(
            (account - self._base_k + 1) * self._spacing_us
        )

    def loaded_count(self, now_us: int) -> int:
        full = min(self.n_records, math.floor(now_us / self._spacing_us) + 1)
        if full <= self._base_k:
            return full
        resumed = math.floor(max(0, now_us - self._base_t) / self._spacing_us)
        return min(self.n_records, self._base_k + resumed)

    def enrich(self, subtask: int, account: int, t0: int) -> tuple[int, None]:
        ready = self.record_available_us(account % self.n_records)
        return max(t0, ready) + self.lookup_us, None

    def on_complete(self, subtask: int, account: int, done_at: int) -> None:
        pass

    def drop_transient(self) -> None:
        pass

    def snapshot(self, now_us: int) -> dict[str, int]:
        return {"loaded": self.loaded_count(now_us)}

    def restore(self, state: dict[str, int], now_us: int) -> None:
        self._base_k = state["loaded"]
        self._base_t = now_us


class ModelSessionStrategy:
    """Per-event pass-through; model work happens at pane scoring time."""

    blocking = True
    uses_pool = False

    def __init__(self, sessions: "ModelSessionCache") -> None:
        self.sessions = sessions

    def enrich(self, subtask: int, account: int, t0: int) -> tuple[int, None]:
        return t0, None

    def on_complete(self, subtask: int, account: int, done_at: int) -> None:
        pass

    def drop_transient(self) -> None:
        self.sessions.flush()


class ModelSessionCache:
    """Scoring sessions keyed by service, rebuilt after every flush.

    A cold score fetches the model artifact from the object store, spins up
    a session, then runs the prediction; a warm score runs the prediction
    only.  Sessions stay resident until ``flush`` (or a failure) clears
    them.  Admitting a session beyond the memory budget aborts the run:
    there is no eviction, mirroring a scorer that pins its sessions.
    """

    def __init__(
        self,
        store: ObjectStore,
        session_init_us: int,
        predict_us: int,
        session_memory_mb: float,
        memory_budget_mb: float,
    ) -> None:
        self.store = store
        self.session_init_us = session_init_us
        self.predict_us = predict_us
        self.session_memory_mb = session_memory_mb
        self.memory_budget_mb = memory_budget_mb
        self._sessions: dict[Any, bool] = {}
        self.cold_scores = 0
        self.warm_scores = 0
        self.sessions_built = 0

    @property
    def resident_mb(self) -> float:
        return len(self._sessions) * self.session_memory_mb

    def score(self, service_key: Any, model: str, t0: int) -> tuple[int, bool]:
        """Returns (done_at, was_cold)."""
        if service_key in self._sessions:
            self.warm_scores += 1
            return t0 + self.predict_us, False
        if self.resident_mb + self.session_memory_mb > self.memory_budget_mb:
            raise RuntimeAbort(
                f"session memory budget exhausted: {self.resident_mb:g} MB "
                f"resident + {self.session_memory_mb:g} MB needed "
                f"> {self.memory_budget_mb:g} MB budget"
            )
        fetched_at, _ = self.store.fetch_blob(model, t0)
        self._sessions[service_key] = True
        self.cold_scores += 1
        self.sessions_built += 1
        return fetched_at + self.session_init_us + self.predict_us, True

    def flush(self) -> None:
        self._sessions.clear()
