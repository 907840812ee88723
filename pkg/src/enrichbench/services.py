"""Simulated external services: table store, shared cache, object store.

Each service owns a bank of ``max_concurrent`` logical servers and admits
requests FIFO: a request issued at time ``t`` starts service at ``t`` if a
server is free, otherwise when the earliest busy server frees up.  Completion
is ``max(issued_at, service_start) + sampled service time``.  Requests must be
issued in nondecreasing virtual time (the scheduler guarantees this), which
lets completions be computed analytically without extra scheduler events.

A lookup that finds nothing still costs a full service round trip.  Cache
state mutates in issue order; recency is refreshed on every hit (strict LRU).
"""

from __future__ import annotations

import heapq
import random
from collections import OrderedDict
from typing import Any, Hashable

from .simkernel import Distribution, sample_us

__all__ = [
    "UnknownTable",
    "UnknownBlob",
    "MISS",
    "ServerBank",
    "TableStore",
    "CacheService",
    "ObjectStore",
    "LruCache",
]


class UnknownTable(KeyError):
    """Raised for a query against a table that was never created."""


class UnknownBlob(KeyError):
    """Raised for a fetch of an unregistered blob."""


class _Miss:
    __slots__ = ()

    def __repr__(self) -> str:  # pragma: no cover
        return "MISS"


#: Sentinel returned by cache lookups that find nothing.
MISS = _Miss()


class ServerBank:
    """FIFO admission to a fixed number of concurrent servers."""

    def __init__(self, max_concurrent: int) -> None:
        if max_concurrent < 1:
            raise ValueError("max_concurrent must be >= 1")
        self.max_concurrent = max_concurrent
        self._busy_until: list[int] = []

    def admit(self, issued_at: int, service_us: int) -> int:
        """Returns the completion time of a request issued at ``issued_at``."""
        busy = self._busy_until
        if len(busy) < self.max_concurrent:
            completion = issued_at + service_us
        else:
            free_at = heapq.heappop(busy)
            completion = max(issued_at, free_at) + service_us
        heapq.heappush(busy, completion)
        return completion

    def in_service_at(self, t: int) -> int:
        """Number of servers busy at time t (diagnostic)."""
        return sum(1 for b in self._busy_until if b > t)


class LruCache:
    """Strict least-recently-used cache with a fixed entry capacity."""

    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._entries: OrderedDict[Hashable, Any] = OrderedDict()

    def __len__(self) -> int:
        return len(self._entries)

    def get(self, key: Hashable):
        entries = self._entries
        if key in entries:
            entries.move_to_end(key)
            return entries[key]
        return MISS

    def put(self, key: Hashable, value: Any) -> None:
        entries = self._entries
        if key in entries:
            entries.move_to_end(key)
        entries[key] = value
        if len(entries) > self.capacity:
            entries.popitem(last=False)

    def clear(self) -> None:
        self._entries.clear()


class TableStore:
    """Keyed lookup tables with per-query service times.

    Standard table names for the fraud workload: ``device``, ``location``,
    ``transaction``.
    """

    def __init__(
        self,
        service_time: Distribution,
        max_concurrent: int,
        rng: random.Random,
    ) -> None:
        self.service_time = service_time
        self.bank = ServerBank(max_concurrent)
        self.rng = rng
        self.tables: dict[str, dict[Hashable, Any]] = {}

    def create_table(self, name: str) -> None:
        self.tables.setdefault(name, {})

    def insert(self, table: str, key: Hashable, value: Any) -> None:
        try:
            self.tables[table][key] = value
        except KeyError:
            raise UnknownTable(table) from None

    def query(self, table: str, key: Hashable, issued_at: int) -> tuple[int, Any]:
        """Returns (completion_time_us, value or MISS); misses cost a full trip."""
        try:
            rows = self.tables[table]
        except KeyError:
            raise UnknownTable(table) from None
        completion = self.bank.admit(
            issued_at, sample_us(self.service_time, self.rng)
        )
        return completion, rows.get(key, MISS)

    def query_span(self, issued_at: int, fanout: int) -> int:
        """Completion of the slowest of ``fanout`` point reads issued together.

        Identical admission and service-time sampling to ``fanout`` calls of
        :meth:`query` at the same instant, without the per-table value
        handling; for callers that only need the timing envelope."""
        admit = self.bank.admit
        service_time = self.service_time
        rng = self.rng
        completion = issued_at
        for _ in range(fanout):
            c = admit(issued_at, sample_us(service_time, rng))
            if c > completion:
                completion = c
        return completion

    def row_count(self, table: str) -> int:
        try:
            return len(self.tables[table])
        except KeyError:
            raise UnknownTable(table) from None

    def rows(self, table: str) -> dict[Hashable, Any]:
        """Direct row access for seeding/export paths (no service trip)."""
        try:
            return self.tables[table]
        except KeyError:
            raise UnknownTable(table) from None


class CacheService:
    """A shared LRU cache reached over the (simulated) network."""

    def __init__(
        self,
        service_time: Distribution,
        max_concurrent: int,
        capacity: int,
        rng: random.Random,
    ) -> None:
        self.service_time = service_time
        self.bank = ServerBank(max_concurrent)
        self.lru = LruCache(capacity)
        self.rng = rng

    def cache_get(self, key: Hashable, issued_at: int) -> tuple[int, Any]:
        completion = self.bank.admit(
            issued_at, sample_us(self.service_time, self.rng)
        )
        return completion, self.lru.get(key)

    def cache_put(self, key: Hashable, value: Any, issued_at: int) -> int:
        """Returns the acknowledgement time."""
        completion = self.bank.admit(
            issued_at, sample_us(self.service_time, self.rng)
        )
        self.lru.put(key, value)
        return completion


class ObjectStore:
    """Named binary blobs (model artifacts) with per-blob fetch times."""

    def __init__(self, max_concurrent: int, rng: random.Random) -> None:
        self.bank = ServerBank(max_concurrent)
        self.rng = rng
        self._blobs: dict[str, tuple[int, Distribution]] = {}

    def register_blob(
        self, name: str, size_bytes: int, fetch_time: Distribution
    ) -> None:
        self._blobs[name] = (size_bytes, fetch_time)

    def fetch_blob(self, name: str, issued_at: int) -> tuple[int, int]:
        """Returns (completion_time_us, size_bytes)."""
        try:
            size_bytes, fetch_time = self._blobs[name]
        except KeyError:
            raise UnknownBlob(name) from None
        completion = self.bank.admit(issued_at, sample_us(fetch_time, self.rng))
        return completion, size_bytes
