"""Multi-versioned key-value state with per-block snapshots.

Each key owns an append-only chain of ``(version, value)`` entries sorted by
version. A snapshot is nothing more than a block number: reading through it
bisects the chain for the newest version not later than the block. Chains are
never rewritten, so a handle keeps observing the same state no matter how many
blocks are applied after it was taken.
"""
from __future__ import annotations

import bisect
import threading
from dataclasses import dataclass
from typing import Any, Iterable, Iterator, Optional

from .core import ContractViolation, SeqNum, Version


class StaleHandleError(Exception):
    """Read through a snapshot that has been released and pruned."""


@dataclass
class SnapshotHandle:
    block: int
    refcount: int = 0
    pruned: bool = False


class MvStore:
    def __init__(self, initial: Optional[Iterable[tuple[str, Any]]] = None):
        self._vers: dict[str, list[Version]] = {}
        self._vals: dict[str, list[Any]] = {}
        self._snapshots: dict[int, SnapshotHandle] = {0: SnapshotHandle(0)}
        self.latest_block = 0
        self._lock = threading.Lock()
        if initial is not None:
            self.preload(initial)

    # -- genesis ---------------------------------------------------------
    def preload(self, items: Iterable[tuple[str, Any]]) -> None:
        """Load genesis entries; the k-th key gets version (0, k)."""
        if self.latest_block != 0:
            raise ContractViolation("preload only before the first block")
        k = sum(len(v) for v in self._vers.values())
        for key, val in items:
            k += 1
            self._append(key, SeqNum(0, k), val)

    def _append(self, key: str, ver: Version, val: Any) -> None:
        vers = self._vers.get(key)
        if vers is None:
            self._vers[key] = [ver]
            self._vals[key] = [val]
            return
        if not vers[-1] < ver:
            raise ContractViolation(f"version {ver} of {key!r} not after {vers[-1]}")
        vers.append(ver)
        self._vals[key].append(val)

    # -- writer side -----------------------------------------------------
    def apply_block(self, number: int, effects: Iterable[tuple[int, dict[str, Any]]]) -> SnapshotHandle:
        """Install the committed write sets of block ``number``.

        ``effects`` holds ``(position, writeset)`` pairs in block order.
        """
        with self._lock:
            if number != self.latest_block + 1:
                raise ContractViolation(f"block {number} applied after {self.latest_block}")
            for pos, writes in effects:
                ver = SeqNum(number, pos)
                for key, val in writes.items():
                    self._append(key, ver, val)
            self.latest_block = number
            handle = self._snapshots[number] = SnapshotHandle(number)
            return handle

    # -- reader side -----------------------------------------------------
    def acquire(self, block: Optional[int] = None) -> SnapshotHandle:
        block = self.latest_block if block is None else block
        with self._lock:
            handle = self._snapshots.get(block)
            if handle is None or handle.pruned:
                raise StaleHandleError(f"snapshot {block} is not available")
            handle.refcount += 1
            return handle

    def release(self, handle: SnapshotHandle) -> None:
        with self._lock:
            if handle.refcount <= 0:
                raise ContractViolation(f"snapshot {handle.block} released too often")
            handle.refcount -= 1

    def read_at(self, handle: SnapshotHandle, key: str) -> Optional[tuple[Version, Any]]:
        if handle.pruned:
            raise StaleHandleError(f"snapshot {handle.block} was pruned")
        return self.version_before(key, SeqNum.of_snapshot(handle.block))

    def version_before(self, key: str, seq: SeqNum) -> Optional[tuple[Version, Any]]:
        """Newest entry of ``key`` with version strictly below ``seq``."""
        vers = self._vers.get(key)
        if not vers:
            return None
        i = bisect.bisect_left(vers, seq)
        if i == 0:
            return None
        return vers[i - 1], self._vals[key][i - 1]

    def latest(self, key: str) -> Optional[tuple[Version, Any]]:
        vers = self._vers.get(key)
        if not vers:
            return None
        return vers[-1], self._vals[key][-1]

    def latest_version(self, key: str) -> Optional[Version]:
        vers = self._vers.get(key)
        return vers[-1] if vers else None

    def history(self, key: str) -> list[tuple[Version, Any]]:
        return list(zip(self._vers.get(key, ()), self._vals.get(key, ())))

    # -- housekeeping ----------------------------------------------------
    def prune_snapshots(self, min_live_block: int) -> int:
        pruned = 0
        with self._lock:
            for block in sorted(self._snapshots):
                if block >= min_live_block or block == self.latest_block:
                    break
                handle = self._snapshots[block]
                if handle.refcount == 0:
                    handle.pruned = True
                    del self._snapshots[block]
                    pruned += 1
        return pruned

    def live_snapshots(self) -> list[int]:
        return sorted(self._snapshots)

    def keys(self) -> Iterator[str]:
        return iter(self._vers)

    def state(self) -> dict[str, tuple[Version, Any]]:
        return {k: (v[-1], self._vals[k][-1]) for k, v in self._vers.items()}

    def dump(self) -> str:
        """Tab-separated ``key, block:pos, value`` lines, sorted by key."""
        lines = []
        for key in sorted(self._vers):
            lines.append(f"{key}\t{self._vers[key][-1]}\t{self._vals[key][-1]}")
        return "\n".join(lines) + ("\n" if lines else "")
