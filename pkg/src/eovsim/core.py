"""Shared vocabulary: sequence numbers, transactions, blocks, dependency kinds."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Any, NamedTuple, Optional


class ContractViolation(Exception):
    """A caller broke an operation's precondition."""


class SeqNum(NamedTuple):
    """(block, position) pair, ordered lexicographically.

    Snapshot ``M`` (the state after block ``M`` commits) is ``SeqNum(M + 1, 0)``;
    a transaction at position ``p`` of block ``b`` has ``SeqNum(b, p)``.
    """

    block: int
    pos: int

    def __str__(self) -> str:
        return f"{self.block}:{self.pos}"

    @classmethod
    def parse(cls, text: str) -> "SeqNum":
        block, _, pos = text.partition(":")
        if not _:
            raise ValueError(f"bad sequence number {text!r}")
        return cls(int(block), int(pos))

    @classmethod
    def of_snapshot(cls, block: int) -> "SeqNum":
        return cls(block + 1, 0)


# A version is the sequence number of the transaction that wrote it.
Version = SeqNum


def cmp_seq(a: SeqNum, b: SeqNum) -> int:
    """-1, 0 or 1, like the old ``cmp``."""
    return (a > b) - (a < b)


class TxnStatus(str, enum.Enum):
    PENDING = "Pending"
    COMMITTED = "Committed"
    ABORTED_EARLY = "AbortedEarly"
    ABORTED_UNREORDERABLE = "AbortedUnreorderable"
    ABORTED_STALE_SPAN = "AbortedStaleSpan"
    ABORTED_VALIDATION = "AbortedValidation"
    ABORTED_FALSE_POSITIVE = "AbortedFalsePositive"
    # simulation failed inside the contract; never reaches ordering
    ABORTED_APPLICATION = "AbortedApplication"

    @property
    def aborted(self) -> bool:
        return self not in (TxnStatus.PENDING, TxnStatus.COMMITTED)


class DependencyKind(str, enum.Enum):
    NWw = "n-ww"
    NWr = "n-wr"
    NRw = "n-rw"
    CWw = "c-ww"
    CRw = "c-rw"
    AntiRw = "anti-rw"

    @property
    def concurrent(self) -> bool:
        return self in (DependencyKind.CWw, DependencyKind.CRw, DependencyKind.AntiRw)


@dataclass
class Transaction:
    id: int
    start_ts: SeqNum
    readset: dict[str, Version] = field(default_factory=dict)
    writeset: dict[str, Any] = field(default_factory=dict)
    end_ts: Optional[SeqNum] = None
    status: TxnStatus = TxnStatus.PENDING
    fn: str = ""

    def __post_init__(self) -> None:
        if self.start_ts.pos != 0:
            raise ContractViolation(f"txn {self.id}: start_ts must be a snapshot, got {self.start_ts}")

    @property
    def snapshot(self) -> int:
        """Block number the transaction was simulated on."""
        return self.start_ts.block - 1

    def set_end(self, end: SeqNum) -> None:
        if not self.start_ts < end:
            raise ContractViolation(f"txn {self.id}: end {end} not after start {self.start_ts}")
        self.end_ts = end

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "fn": self.fn,
            "start": str(self.start_ts),
            "end": None if self.end_ts is None else str(self.end_ts),
            "status": self.status.value,
            "readset": {k: str(v) for k, v in self.readset.items()},
            "writeset": dict(self.writeset),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Transaction":
        txn = cls(
            id=obj["id"],
            start_ts=SeqNum.parse(obj["start"]),
            readset={k: SeqNum.parse(v) for k, v in obj["readset"].items()},
            writeset=dict(obj["writeset"]),
            status=TxnStatus(obj["status"]),
            fn=obj.get("fn", ""),
        )
        if obj.get("end"):
            txn.end_ts = SeqNum.parse(obj["end"])
        return txn


@dataclass
class Block:
    number: int
    txns: list[int] = field(default_factory=list)
    statuses: dict[int, TxnStatus] = field(default_factory=dict)

    def check(self, block_size: int) -> None:
        if len(self.txns) > block_size:
            raise ContractViolation(f"block {self.number} holds {len(self.txns)} > {block_size} txns")


class Dependency(NamedTuple):
    src: int
    dst: int
    kind: DependencyKind
    key: str


def are_concurrent(t1: Transaction, t2: Transaction) -> bool:
    if t1.end_ts is None or t2.end_ts is None:
        raise ContractViolation("are_concurrent needs both end timestamps")
    first, second = (t1, t2) if t1.end_ts <= t2.end_ts else (t2, t1)
    return second.start_ts < first.end_ts


def classify_dependency(earlier: Transaction, later: Transaction) -> set[Dependency]:
    """Every dependency between two sequenced transactions, one per conflicting key.

    ``src``/``dst`` carry the dependency direction: an anti-rw points from the
    later-committing reader back to the earlier writer.
    """
    if earlier.end_ts is None or later.end_ts is None:
        raise ContractViolation("classify_dependency needs both end timestamps")
    if not earlier.end_ts < later.end_ts:
        raise ContractViolation(f"txn {earlier.id} does not end before txn {later.id}")
    conc = later.start_ts < earlier.end_ts
    e, l = earlier.id, later.id
    deps: set[Dependency] = set()
    for key in earlier.writeset:
        if key in later.writeset:
            deps.add(Dependency(e, l, DependencyKind.CWw if conc else DependencyKind.NWw, key))
        if key in later.readset:
            # a concurrent reader ran on a snapshot without this write
            if conc:
                deps.add(Dependency(l, e, DependencyKind.AntiRw, key))
            else:
                deps.add(Dependency(e, l, DependencyKind.NWr, key))
    for key in earlier.readset:
        if key in later.writeset:
            deps.add(Dependency(e, l, DependencyKind.CRw if conc else DependencyKind.NRw, key))
    return deps
