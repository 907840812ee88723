"""Sliding / tumbling window arithmetic on integer-microsecond timestamps.

A window is identified by its half-open span ``[start, start + size)``.
Windows advance by ``slide``; ``size`` must be a positive multiple of
``slide`` (``size == slide`` gives tumbling windows).  Window starts are
aligned to multiples of the slide, so starts near the epoch can be negative:
a timestamp of 0 with size 10s / slide 5s belongs to ``[-5s, 5s)`` and
``[0s, 10s)``.
"""

from __future__ import annotations

from dataclasses import dataclass

__all__ = ["WindowSpec", "assign_windows", "first_window_end"]


@dataclass(frozen=True)
class WindowSpec:
    size_us: int
    slide_us: int

    def __post_init__(self) -> None:
        if self.slide_us <= 0 or self.size_us <= 0:
            raise ValueError("window size and slide must be positive")
        if self.size_us % self.slide_us != 0:
            raise ValueError("window size must be a multiple of the slide")

    @property
    def panes_per_event(self) -> int:
        return self.size_us // self.slide_us


def assign_windows(timestamp_us: int, spec: WindowSpec) -> list[tuple[int, int]]:
    """All windows containing the timestamp, earliest start first.

    Each returned pair is ``(start, end)`` with ``start <= t < end``.
    """
    slide, size = spec.slide_us, spec.size_us
    last_start = (timestamp_us // slide) * slide
    return [
        (start, start + size)
        for start in range(last_start - size + slide, last_start + slide, slide)
    ]


def first_window_end(timestamp_us: int, spec: WindowSpec) -> int:
    """End of the earliest-closing window containing the timestamp."""
    return (timestamp_us // spec.slide_us + 1) * spec.slide_us
