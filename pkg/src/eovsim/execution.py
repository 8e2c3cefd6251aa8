"""Endorsement: simulate a contract against one block snapshot."""
from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

from .core import SeqNum, Transaction
from .mvstore import MvStore, SnapshotHandle
from .workload import ApplicationError, Proposal, smallbank_contract

__all__ = ["ApplicationError", "Arrival", "Endorsement", "dispatch_to_ordering", "simulate"]


@dataclass
class Endorsement:
    txn: Transaction
    sim_block: int
    start_tick: int
    finish_tick: int
    proposal: Proposal
    handle: Optional[SnapshotHandle] = None
    # a block committed while the reads were in flight
    cross_block: bool = False

    def release(self, store: MvStore) -> None:
        if self.handle is not None:
            store.release(self.handle)
            self.handle = None


class Arrival(NamedTuple):
    tick: int
    id: int
    endorsement: Endorsement


def simulate(p: Proposal, now: int, store: MvStore, read_interval: int = 0,
             block: Optional[int] = None) -> Endorsement:
    """Run ``p`` on the latest snapshot (or ``block``) and pin that snapshot.

    Writes are buffered in the returned transaction, never applied. The
    snapshot stays pinned until :meth:`Endorsement.release`.
    """
    handle = store.acquire(block)
    readset = {}

    def read(key: str):
        hit = store.read_at(handle, key)
        if hit is None:
            return None
        readset.setdefault(key, hit[0])
        return hit[1]

    try:
        reads, writes = smallbank_contract(p.fn, p.args, read)
    except ApplicationError:
        store.release(handle)
        raise
    txn = Transaction(p.id, SeqNum.of_snapshot(handle.block), readset, writes, fn=p.fn)
    if p.read_interval is not None:
        read_interval = p.read_interval
    finish = now + len(reads) * read_interval
    return Endorsement(txn, handle.block, now, finish, p, handle)


def dispatch_to_ordering(e: Endorsement, client_delay: int) -> Arrival:
    return Arrival(e.finish_tick + client_delay + e.proposal.delay, e.txn.id, e)
