"""Routing of events from sources to parallel subtasks.

Three policies, mirroring the routing modes of the modeled job:

* ``key_hash``    - FNV-1a 64-bit hash of the key bytes, modulo parallelism.
* ``rebalance``   - round-robin, ignoring the key.
* ``custom_map``  - an explicit key -> subtask rule computed upstream; the
  built-in rule ``ordinal_mod`` sends a numeric key to ``key % parallelism``
  so each key lands on exactly one subtask and a keyspace that is a multiple
  of the parallelism spreads perfectly evenly.
"""

from __future__ import annotations

from typing import Callable

__all__ = ["fnv1a64", "Partitioner", "key_bytes_for_account"]

_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = 0xFFFFFFFFFFFFFFFF


def fnv1a64(data: bytes) -> int:
    """FNV-1a 64-bit hash."""
    h = _FNV_OFFSET
    for byte in data:
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def key_bytes_for_account(account_id: int) -> bytes:
    return b"acct-%d" % account_id


class Partitioner:
    """Routes (key_bytes, key_ordinal) pairs to a subtask index."""

    KINDS = ("key_hash", "rebalance", "custom_map")

    def __init__(
        self,
        kind: str,
        parallelism: int,
        custom_rule: Callable[[int], int] | None = None,
    ) -> None:
        if kind not in self.KINDS:
            raise ValueError(f"unknown partitioner kind {kind!r}")
        if parallelism < 1:
            raise ValueError("parallelism must be >= 1")
        self.kind = kind
        self.parallelism = parallelism
        self._cursor = 0
        if kind == "custom_map":
            self._rule = custom_rule or (lambda ordinal: ordinal % parallelism)
        else:
            self._rule = None

    def route(self, key: bytes, ordinal: int = 0) -> int:
        """Subtask index in [0, parallelism) for the given key."""
        if self.kind == "key_hash":
            return fnv1a64(key) % self.parallelism
        if self.kind == "rebalance":
            i = self._cursor
            self._cursor = (i + 1) % self.parallelism
            return i
        return self._rule(ordinal) % self.parallelism

    def state(self) -> int:
        """Opaque routing state (round-robin cursor) for checkpointing."""
        return self._cursor

    def restore(self, state: int) -> None:
        self._cursor = state
