"""Virtual clock, event scheduler, and seeded randomness.

Everything in the simulator runs against a single integer-microsecond clock.
Actions are dispatched in (fire_at, sequence) order, so two actions scheduled
for the same instant run in the order they were scheduled (FIFO).  Dispatch is
reentrant: an action may schedule further actions at or before the current
horizon and they run within the same ``run_until`` call.

Randomness is organized as labeled substreams fanned out from one master
seed.  Each label gets an independent ``random.Random`` (Mersenne Twister)
whose seed is derived by hashing ``(master_seed, label)`` with SHA-256, so
stream identity is stable across platforms and across unrelated config
changes: enabling a cache, for example, cannot perturb the datasource's
sampling sequence because the two components draw from differently labeled
streams.
"""

from __future__ import annotations

import hashlib
import heapq
import math
import random
from dataclasses import dataclass, field
from typing import Any, Callable

__all__ = [
    "SchedulingInPast",
    "InvalidDistribution",
    "Scheduler",
    "RandomStreams",
    "Distribution",
    "constant",
    "uniform",
    "exponential",
    "lognormal",
    "sample",
    "sample_us",
]


class SchedulingInPast(ValueError):
    """Raised when an action is scheduled strictly before the current clock."""


class InvalidDistribution(ValueError):
    """Raised for out-of-domain distribution parameters."""


class Scheduler:
    """Min-heap action scheduler over a virtual integer-microsecond clock."""

    def __init__(self) -> None:
        self._now = 0
        self._seq = 0
        self._heap: list[tuple[int, int, Callable[..., None], tuple]] = []
        self._cancelled: set[int] = set()

    @property
    def now(self) -> int:
        """Current virtual time in microseconds."""
        return self._now

    def schedule(self, fire_at: int, fn: Callable[..., None], *args: Any) -> int:
        """Schedule ``fn(*args)`` at virtual time ``fire_at``.

        Returns an opaque handle usable with :meth:`cancel`.  Scheduling at
        the current instant is allowed; scheduling in the past is an error.
        """
        if fire_at < self._now:
            raise SchedulingInPast(
                f"cannot schedule at t={fire_at}us; clock is at t={self._now}us"
            )
        self._seq += 1
        heapq.heappush(self._heap, (fire_at, self._seq, fn, args))
        return self._seq

    def cancel(self, handle: int) -> None:
        """Cancel a not-yet-dispatched action.  Cancelling twice is a no-op."""
        self._cancelled.add(handle)

    def run_until(self, horizon: int) -> int:
        """Dispatch every action with fire_at <= horizon; returns the count.

        Actions scheduled during dispatch participate if they land at or
        before the horizon.  On return the clock reads exactly ``horizon``.
        """
        if horizon < self._now:
            raise SchedulingInPast(
                f"cannot run to t={horizon}us; clock is at t={self._now}us"
            )
        dispatched = 0
        heap = self._heap
        cancelled = self._cancelled
        while heap and heap[0][0] <= horizon:
            fire_at, seq, fn, args = heapq.heappop(heap)
            self._now = fire_at
            if cancelled and seq in cancelled:
                cancelled.discard(seq)
                continue
            fn(*args)
            dispatched += 1
        self._now = horizon
        return dispatched


class RandomStreams:
    """Registry of labeled, independently seeded random substreams."""

    def __init__(self, master_seed: int) -> None:
        self.master_seed = master_seed
        self._streams: dict[str, random.Random] = {}

    def stream(self, label: str) -> random.Random:
        """Return the generator for ``label``, creating it on first use."""
        rng = self._streams.get(label)
        if rng is None:
            rng = random.Random(self.derive_seed(self.master_seed, label))
            self._streams[label] = rng
        return rng

    @staticmethod
    def derive_seed(master_seed: int, label: str) -> int:
        """Stable 64-bit substream seed from (master_seed, label)."""
        digest = hashlib.sha256(f"{master_seed}\x1f{label}".encode()).digest()
        return int.from_bytes(digest[:8], "big")


@dataclass(frozen=True)
class Distribution:
    """A non-negative service-time distribution.

    kind        parameters            constraint
    --------    ------------------    -------------------
    constant    value                 value >= 0
    uniform     lo, hi                0 <= lo <= hi
    exponential mean                  mean > 0
    lognormal   mu, sigma             sigma >= 0

    Values are in the caller's unit (the engine uses milliseconds in configs
    and microseconds internally; see :func:`sample_us`).
    """

    kind: str
    params: tuple[float, ...] = field(default=())

    def __post_init__(self) -> None:
        k, p = self.kind, self.params
        if k == "constant":
            if len(p) != 1 or p[0] < 0:
                raise InvalidDistribution(f"constant requires value >= 0, got {p}")
        elif k == "uniform":
            if len(p) != 2 or not (0 <= p[0] <= p[1]):
                raise InvalidDistribution(f"uniform requires 0 <= lo <= hi, got {p}")
        elif k == "exponential":
            if len(p) != 1 or p[0] <= 0:
                raise InvalidDistribution(f"exponential requires mean > 0, got {p}")
        elif k == "lognormal":
            if len(p) != 2 or p[1] < 0:
                raise InvalidDistribution(f"lognormal requires sigma >= 0, got {p}")
        else:
            raise InvalidDistribution(f"unknown distribution kind {k!r}")

    @property
    def mean(self) -> float:
        """Analytic mean (lognormal: exp(mu + sigma^2/2))."""
        k, p = self.kind, self.params
        if k == "constant":
            return p[0]
        if k == "uniform":
            return (p[0] + p[1]) / 2
        if k == "exponential":
            return p[0]
        return math.exp(p[0] + p[1] ** 2 / 2)


def constant(value: float) -> Distribution:
    return Distribution("constant", (value,))


def uniform(lo: float, hi: float) -> Distribution:
    return Distribution("uniform", (lo, hi))


def exponential(mean: float) -> Distribution:
    return Distribution("exponential", (mean,))


def lognormal(mu: float, sigma: float) -> Distribution:
    return Distribution("lognormal", (mu, sigma))


def sample(dist: Distribution, rng: random.Random) -> float:
    """Draw one value; always >= 0.  Constants consume no randomness."""
    k, p = dist.kind, dist.params
    if k == "constant":
        return p[0]
    if k == "uniform":
        return rng.uniform(p[0], p[1])
    if k == "exponential":
        return rng.expovariate(1.0 / p[0])
    if p[1] == 0.0:
        return math.exp(p[0])
    return rng.lognormvariate(p[0], p[1])


def sample_us(dist: Distribution, rng: random.Random, scale: float = 1000.0) -> int:
    """Draw one value in config units and round to integer microseconds.

    ``scale`` converts config units to microseconds (default: milliseconds).
    """
    if dist.kind == "constant":
        return round(dist.params[0] * scale)
    return max(0, round(sample(dist, rng) * scale))
