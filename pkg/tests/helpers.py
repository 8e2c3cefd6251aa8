"""Small constructors shared by the test modules."""
from __future__ import annotations

from eovsim.core import SeqNum, Transaction


def txn(tid: int, snap: int, reads: dict | None = None, writes=(), end: tuple | None = None) -> Transaction:
    """Txn simulated on block ``snap``; ``reads`` maps key -> (block, pos)."""
    t = Transaction(tid, SeqNum.of_snapshot(snap),
                    {k: SeqNum(*v) for k, v in (reads or {}).items()},
                    {k: f"v{tid}" for k in writes})
    if end is not None:
        t.set_end(SeqNum(*end))
    return t
