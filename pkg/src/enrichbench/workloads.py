"""Event stream generation and reference-data seeding.

Events are drawn lazily, one partition at a time, so a run never holds more
than one pending event per partition in memory.  Each partition owns a
labeled random stream and draws, per event: the arrival gap (Poisson mode
only), then the payload fields, in a fixed order — which is what makes a
partition's stream replayable from a snapshot of (ordinal, clock, RNG
state, pending event).

Arrival modes:

* ``poisson``  per-partition Poisson process at rate/partitions, integrated
  exactly across rate-schedule steps (superposed, the partitions form a
  Poisson stream at the scheduled rate).
* ``uniform``  evenly spaced arrivals; partition ``p`` takes the phase-``p``
  comb of the global grid, so per-partition second counts are exact.

``RateSchedule.count_between`` reports the *offered* load analytically from
the schedule.  In uniform mode this equals the realized count; in Poisson
mode it is the intensity, so a consumed-vs-offered comparison stays
noise-free on the offered side.
"""

from __future__ import annotations

import math
import random
from typing import Iterator, NamedTuple

from .enrichment import derive_suspicion_flags
from .partitioning import fnv1a64
from .services import TableStore

__all__ = [
    "Event",
    "RateSchedule",
    "FraudSource",
    "LogSource",
    "make_fraud_sources",
    "make_log_sources",
    "seed_historical",
    "dump_reference",
    "load_reference",
    "REFERENCE_HEADER",
    "ATTRIBUTE_FOR_TABLE",
]


class Event(NamedTuple):
    id: int
    partition: int
    create_us: int
    key: int
    flags: int
    amount_cents: int


class RateSchedule:
    """Piecewise-constant offered rate; right-continuous at breakpoints."""

    def __init__(self, breakpoints: list[tuple[int, float]]) -> None:
        if not breakpoints or breakpoints[0][0] != 0:
            raise ValueError("rate schedule must start at t=0")
        starts = [s for s, _ in breakpoints]
        if starts != sorted(set(starts)):
            raise ValueError("rate schedule breakpoints must strictly increase")
        for _, r in breakpoints:
            if not (r >= 0 and math.isfinite(r)):
                raise ValueError(f"rates must be finite and >= 0, got {r}")
        self.breakpoints = list(breakpoints)

    @classmethod
    def constant(cls, rate: float) -> "RateSchedule":
        return cls([(0, rate)])

    @classmethod
    def ramp(
        cls, initial: float, increment: float, step_s: float, n_steps: int
    ) -> "RateSchedule":
        return cls(
            [(round(i * step_s * 1e6), initial + i * increment) for i in range(n_steps)]
        )

    def rate_at(self, t_us: int) -> float:
        rate = self.breakpoints[0][1]
        for start, r in self.breakpoints:
            if start > t_us:
                break
            rate = r
        return rate

    def _segments(self) -> Iterator[tuple[int, int | None, float]]:
        for i, (start, rate) in enumerate(self.breakpoints):
            next_start = (
                self.breakpoints[i + 1][0] if i + 1 < len(self.breakpoints) else None
            )
            yield start, next_start, rate

    def count_between(self, a_us: int, b_us: int) -> int:
        """Offered events with create time in [a, b), from the schedule."""
        total = 0
        for start, end, rate in self._segments():
            lo = max(a_us, start)
            hi = b_us if end is None else min(b_us, end)
            if hi > lo and rate > 0:
                def upto(t: int) -> int:
                    if t <= start:
                        return 0
                    # arrivals at start + floor(i*1e6/rate): count i with
                    # that instant < t
                    return math.ceil((t - start) * rate / 1e6)
                total += upto(hi) - upto(lo)
        return total


class _Arrivals:
    """One partition's arrival clock over a shared rate schedule."""

    def __init__(
        self,
        schedule: RateSchedule,
        n_partitions: int,
        partition: int,
        mode: str,
        rng: random.Random,
    ) -> None:
        if mode not in ("poisson", "uniform"):
            raise ValueError(f"unknown arrival mode {mode!r}")
        self.schedule = schedule
        self.n = n_partitions
        self.p = partition
        self.mode = mode
        self.rng = rng
        self._seg = 0  # index into schedule.breakpoints
        self._i = 0  # uniform: ordinal within the current segment
        self._t = 0.0  # poisson: exact arrival clock, us

    def _segment(self, idx: int) -> tuple[int, int | None, float]:
        start, rate = self.schedule.breakpoints[idx]
        nxt = (
            self.schedule.breakpoints[idx + 1][0]
            if idx + 1 < len(self.schedule.breakpoints)
            else None
        )
        return start, nxt, rate

    def next_create_us(self) -> int | None:
        if self.mode == "uniform":
            return self._next_uniform()
        return self._next_poisson()

    def _next_uniform(self) -> int | None:
        while True:
            start, end, rate = self._segment(self._seg)
            if rate > 0:
                t = start + math.floor((self._i * self.n + self.p) * 1e6 / rate)
                if end is None or t < end:
                    self._i += 1
                    return t
            if end is None:
                return None
            self._seg += 1
            self._i = 0

    def _next_poisson(self) -> int | None:
        e = self.rng.expovariate(1.0)
        t = self._t
        while True:
            start, end, rate = self._segment(self._seg)
            if rate > 0:
                lam = rate / (self.n * 1e6)  # events per us on this partition
                dt = e / lam
                if end is None or t + dt < end:
                    t += dt
                    break
                e -= (end - t) * lam
            if end is None:
                return None
            t = end
            self._seg += 1
        self._t = t
        return math.floor(t)

    def snapshot(self) -> dict:
        return {"seg": self._seg, "i": self._i, "t": self._t}

    def restore(self, state: dict) -> None:
        self._seg = state["seg"]
        self._i = state["i"]
        self._t = state["t"]


class _SourceBase:
    """Lookahead-one event source for a single partition."""

    def __init__(
        self,
        partition: int,
        n_partitions: int,
        schedule: RateSchedule,
        arrival_mode: str,
        rng: random.Random,
    ) -> None:
        self.partition = partition
        self.n_partitions = n_partitions
        self.rng = rng
        self._arrivals = _Arrivals(schedule, n_partitions, partition, arrival_mode, rng)
        self._drawn = 0
        self.pending: Event | None = None
        self._advance()

    def _advance(self) -> None:
        create = self._arrivals.next_create_us()
        if create is None:
            self.pending = None
            return
        event_id = self._drawn * self.n_partitions + self.partition
        self._drawn += 1
        self.pending = self._draw(event_id, create)

    def _draw(self, event_id: int, create_us: int) -> Event:
        raise NotImplementedError

    def pop(self) -> Event:
        event = self.pending
        assert event is not None, "pop() past the end of the stream"
        self._advance()
        return event

    def snapshot(self) -> dict:
        return {
            "rng": self.rng.getstate(),
            "arrivals": self._arrivals.snapshot(),
            "drawn": self._drawn,
            "pending": None if self.pending is None else tuple(self.pending),
        }

    def restore(self, state: dict) -> None:
        self.rng.setstate(state["rng"])
        self._arrivals.restore(state["arrivals"])
        self._drawn = state["drawn"]
        self.pending = (
            None if state["pending"] is None else Event(*state["pending"])
        )


class FraudSource(_SourceBase):
    """Payment events: account, counterparty/device/location truth, amount.

    Per event the stream consumes, in order: the arrival gap (Poisson mode),
    the account draw, three Bernoulli draws for whether receiver, device and
    location are registered for that account, and the amount (log-normally
    distributed dollars, stored as integer cents).
    """

    def __init__(
        self,
        partition: int,
        n_partitions: int,
        schedule: RateSchedule,
        arrival_mode: str,
        rng: random.Random,
        n_accounts: int,
        known_receiver_prob: float,
        known_device_prob: float,
        known_location_prob: float,
        amount_mu: float = 3.0,
        amount_sigma: float = 1.0,
    ) -> None:
        self.n_accounts = n_accounts
        self.p_receiver = known_receiver_prob
        self.p_device = known_device_prob
        self.p_location = known_location_prob
        self.amount_mu = amount_mu
        self.amount_sigma = amount_sigma
        super().__init__(partition, n_partitions, schedule, arrival_mode, rng)

    def _draw(self, event_id: int, create_us: int) -> Event:
        rng = self.rng
        account = rng.randrange(self.n_accounts)
        flags = derive_suspicion_flags(
            rng.random() < self.p_receiver,
            rng.random() < self.p_device,
            rng.random() < self.p_location,
        )
        amount_cents = round(rng.lognormvariate(self.amount_mu, self.amount_sigma) * 100)
        return Event(event_id, self.partition, create_us, account, flags, amount_cents)


class LogSource(_SourceBase):
    """Request-log events keyed by service; key popularity is bell-shaped
    (a service index is the popcount of ``n_services - 1`` coin flips)."""

    def __init__(
        self,
        partition: int,
        n_partitions: int,
        schedule: RateSchedule,
        arrival_mode: str,
        rng: random.Random,
        n_services: int,
    ) -> None:
        if n_services < 2:
            raise ValueError("need at least two services")
        self.n_services = n_services
        super().__init__(partition, n_partitions, schedule, arrival_mode, rng)

    def _draw(self, event_id: int, create_us: int) -> Event:
        key = self.rng.getrandbits(self.n_services - 1).bit_count()
        return Event(event_id, self.partition, create_us, key, 0, 0)


def make_fraud_sources(
    streams,
    n_partitions: int,
    schedule: RateSchedule,
    arrival_mode: str,
    n_accounts: int,
    known_receiver_prob: float,
    known_device_prob: float,
    known_location_prob: float,
    amount_mu: float = 3.0,
    amount_sigma: float = 1.0,
) -> list[FraudSource]:
    return [
        FraudSource(
            p,
            n_partitions,
            schedule,
            arrival_mode,
            streams.stream(f"workload-{p}"),
            n_accounts,
            known_receiver_prob,
            known_device_prob,
            known_location_prob,
            amount_mu,
            amount_sigma,
        )
        for p in range(n_partitions)
    ]


def make_log_sources(
    streams,
    n_partitions: int,
    schedule: RateSchedule,
    arrival_mode: str,
    n_services: int,
) -> list[LogSource]:
    return [
        LogSource(
            p,
            n_partitions,
            schedule,
            arrival_mode,
            streams.stream(f"workload-{p}"),
            n_services,
        )
        for p in range(n_partitions)
    ]


# --- reference tables -----------------------------------------------------

ATTRIBUTE_FOR_TABLE = {
    "receiver_accounts": "counterparties",
    "device_registry": "devices",
    "location_history": "locations",
}

REFERENCE_HEADER = "table,account_id,attribute_key,value"


def _reference_value(table: str, account: int) -> str:
    digest = fnv1a64(f"{table}:{account}".encode()) & 0xFFFFFFFF
    return f"{ATTRIBUTE_FOR_TABLE[table]}-{digest:08x}"


def seed_historical(tables: TableStore, n_accounts: int) -> int:
    """Populate the three reference tables for accounts 0..n-1."""
    rows = 0
    for name in ATTRIBUTE_FOR_TABLE:
        tables.create_table(name)
        for account in range(n_accounts):
            tables.insert(name, account, _reference_value(name, account))
            rows += 1
    return rows


def dump_reference(tables: TableStore, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        f.write(REFERENCE_HEADER + "\n")
        for name in ATTRIBUTE_FOR_TABLE:
            attr = ATTRIBUTE_FOR_TABLE[name]
            for account, value in sorted(tables.rows(name).items()):
                f.write(f"{name},{account},{attr},{value}\n")


def load_reference(tables: TableStore, path) -> int:
    rows = 0
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        if header != REFERENCE_HEADER:
            raise ValueError(f"unexpected reference header {header!r}")
        seen: set[str] = set()
        for line in f:
            name, account, _attr, value = line.rstrip("\n").split(",", 3)
            if name not in seen:
                tables.create_table(name)
                seen.add(name)
            tables.insert(name, int(account), value)
            rows += 1
    return rows
