"""Concurrency-control policies behind a common arrival/formation/validation interface."""
from __future__ import annotations

import heapq
from collections import defaultdict
from itertools import islice
from typing import Optional

import networkx as nx

from .core import SeqNum, Transaction, TxnStatus
from .depgraph import AccessIndices, DepGraph, MemoryIndex, Reach
from .mvstore import MvStore

Aborts = list[tuple[Transaction, TxnStatus]]

POLICIES = ("fabric", "fabricpp", "focc-s", "focc-l", "sharp")


# --------------------------------------------------------------------------
# validation checks

def version_check(txns: list[Transaction], store: MvStore) -> list[TxnStatus]:
    """Commit a txn iff every read version is still the newest one.

    Writes of earlier committed txns in the same block count as newer
    versions for the txns after them.
    """
    overlay: dict[str, SeqNum] = {}
    out = []
    for t in txns:
        ok = True
        for k, ver in t.readset.items():
            cur = overlay.get(k)
            if cur is None:
                cur = store.latest_version(k)
            if cur != ver:
                ok = False
                break
        if ok:
            for k in t.writeset:
                overlay[k] = t.end_ts  # type: ignore[assignment]
            out.append(TxnStatus.COMMITTED)
        else:
            out.append(TxnStatus.ABORTED_VALIDATION)
    return out


def snapshot_check(txns: list[Transaction], store: MvStore) -> list[TxnStatus]:
    """Commit a txn iff its reads match one snapshot, the one named by its start."""
    out = []
    for t in txns:
        ok = True
        for k, ver in t.readset.items():
            hit = store.version_before(k, t.start_ts)
            if hit is None or hit[0] != ver:
                ok = False
                break
        out.append(TxnStatus.COMMITTED if ok else TxnStatus.ABORTED_VALIDATION)
    return out


def sequence(txns: list[Transaction], number: int) -> list[Transaction]:
    for i, t in enumerate(txns, 1):
        t.set_end(SeqNum(number, i))
    return txns


# --------------------------------------------------------------------------

class Policy:
    name = ""
    # "lock": simulation re-runs when a block commits underneath it
    executor = "snapshot"

    def __init__(self, max_span: int = 10, reach: Reach | str = Reach.EXACT, **_: object):
        self.max_span = max_span
        self.reach = Reach(reach)
        self.last_arrival_work = 0
        self.last_reorder_work = 0

    def on_arrival(self, txn: Transaction, M: int, cross_block: bool = False) -> Optional[TxnStatus]:
        """Abort status, or ``None`` to admit. ``M`` is the next block number."""
        self.last_arrival_work = 0
        return None

    def on_block_formation(self, pending: list[Transaction], M: int) -> tuple[list[Transaction], Aborts]:
        self.last_reorder_work = 0
        return sequence(list(pending), M), []

    def validate(self, txns: list[Transaction], number: int, store: MvStore) -> list[TxnStatus]:
        return version_check(txns, store)

    def counters(self) -> dict:
        return {}


class Fabric(Policy):
    name = "fabric"
    executor = "lock"


class FabricPP(Policy):
    """Intra-block reordering with batch cycle breaking.

    Cross-block reads are aborted on arrival. At formation a txn that read an
    older version of some key than another txn of the block is dropped, then
    elementary cycles of the reader-before-writer graph are enumerated and
    broken greedily by aborting the txn on the most cycles.
    """

    name = "fabricpp"
    cycle_cap = 200

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.cycles_seen = 0

    def on_arrival(self, txn, M, cross_block=False):
        self.last_arrival_work = 0
        return TxnStatus.ABORTED_EARLY if cross_block else None

    def on_block_formation(self, pending, M):
        arrival = {t.id: i for i, t in enumerate(pending)}
        newest: dict[str, SeqNum] = {}
        for t in pending:
            for k, v in t.readset.items():
                if k not in newest or newest[k] < v:
                    newest[k] = v
        aborts: Aborts = []
        live = []
        for t in pending:
            if any(v < newest[k] for k, v in t.readset.items()):
                aborts.append((t, TxnStatus.ABORTED_EARLY))
            else:
                live.append(t)

        g = nx.DiGraph()
        g.add_nodes_from(t.id for t in live)
        writers: dict[str, list[int]] = defaultdict(list)
        for t in live:
            for k in t.writeset:
                writers[k].append(t.id)
        for t in live:
            for k in t.readset:
                for w in writers.get(k, ()):
                    if w != t.id:
                        g.add_edge(t.id, w)
        work = g.number_of_edges()

        victims: set[int] = set()
        while True:
            sccs = [c for c in nx.strongly_connected_components(g) if len(c) > 1]
            if not sccs:
                break
            cycles = []
            for comp in sorted(sccs, key=min):
                cycles.extend(islice(nx.simple_cycles(g.subgraph(comp)), self.cycle_cap))
            work += sum(len(c) for c in cycles)
            self.cycles_seen += len(cycles)
            remaining = [set(c) for c in cycles]
            while remaining:
                count: dict[int, int] = defaultdict(int)
                for c in remaining:
                    for n in c:
                        count[n] += 1
                victim = min(count, key=lambda n: (-count[n], -g.degree(n), arrival[n]))
                victims.add(victim)
                g.remove_node(victim)
                remaining = [c for c in remaining if victim not in c]

        by_id = {t.id: t for t in live}
        for t in live:
            if t.id in victims:
                aborts.append((t, TxnStatus.ABORTED_UNREORDERABLE))
        order = list(nx.lexicographical_topological_sort(g, key=arrival.__getitem__))
        self.last_reorder_work = work
        return sequence([by_id[i] for i in order], M), aborts

    def counters(self):
        return {"cycles_enumerated": self.cycles_seen}


class FoccS(Policy):
    """Snapshot execution with arrival-time prevention.

    A newcomer is aborted if it has a concurrent ww conflict, or if any of
    the nodes it touches would end up with both an inbound and an outbound
    concurrent rw conflict while incident to an anti-rw one. Block order is
    arrival order, so every edge's direction is known on arrival.
    """

    name = "focc-s"

    def __init__(self, *args, **kw):
        super().__init__(*args, **kw)
        self.idx = AccessIndices(MemoryIndex(), MemoryIndex())
        # txn id -> [has_in, has_out, any_anti]
        self.flags: dict[int, list[bool]] = {}
        self._by_block: dict[int, list[int]] = defaultdict(list)

    def on_arrival(self, txn, M, cross_block=False):
        self.last_arrival_work = 0
        if txn.snapshot <= M - self.max_span:
            return TxnStatus.ABORTED_STALE_SPAN
        start, idx, tid = txn.start_ts, self.idx, txn.id
        for k in txn.writeset:
            if any(i != tid for i in idx.pw.get(k, ())) or idx.cw.range_from(k, start):
                return TxnStatus.ABORTED_EARLY
        outs: set[int] = set()
        for k in txn.readset:
            outs.update(i for _, i in idx.cw.range_from(k, start))
            outs.update(idx.pw.get(k, ()))
        ins: set[int] = set()
        for k in txn.writeset:
            ins.update(i for _, i in idx.cr.range_from(k, start))
            ins.update(idx.pr.get(k, ()))
        outs.discard(tid)
        ins.discard(tid)
        self.last_arrival_work = len(outs) + len(ins)
        flags = self.flags
        if ins and outs:
            return TxnStatus.ABORTED_EARLY
        for x in outs:
            f = flags.get(x)
            if f is not None and f[1]:
                return TxnStatus.ABORTED_EARLY
        for x in ins:
            f = flags.get(x)
            if f is not None and f[0] and f[2]:
                return TxnStatus.ABORTED_EARLY
        flags[tid] = [bool(ins), bool(outs), bool(outs)]
        for x in outs:
            f = flags.setdefault(x, [False, False, False])
            f[0] = f[2] = True
        for x in ins:
            flags.setdefault(x, [False, False, False])[1] = True
        idx.add_pending(txn)
        return None

    def on_block_formation(self, pending, M):
        self.last_reorder_work = 0
        txns = sequence(list(pending), M)
        for t in txns:
            for k in t.readset:
                self.idx.cr.append(k, t.end_ts, t.id)
            for k in t.writeset:
                self.idx.cw.append(k, t.end_ts, t.id)
            self.idx.drop_pending(t)
            self._by_block[M].append(t.id)
        # nothing committed at or before M + 1 - max_span overlaps a later arrival
        for b in [b for b in self._by_block if b <= M + 1 - self.max_span]:
            for i in self._by_block.pop(b):
                self.flags.pop(i, None)
        return txns, []

    def validate(self, txns, number, store):
        return snapshot_check(txns, store)


class FoccL(Policy):
    """Greedy batch scheduling of the reader-before-writer graph of one block."""

    name = "focc-l"

    def on_block_formation(self, pending, M):
        n = len(pending)
        writers: dict[str, list[int]] = defaultdict(list)
        for i, t in enumerate(pending):
            for k in t.writeset:
                writers[k].append(i)
        out: list[set[int]] = [set() for _ in range(n)]
        inc: list[set[int]] = [set() for _ in range(n)]
        for i, t in enumerate(pending):
            for k in t.readset:
                for j in writers.get(k, ()):
                    if j != i:
                        out[i].add(j)
                        inc[j].add(i)
        work = sum(len(o) for o in out)
        alive = set(range(n))
        ready = [i for i in range(n) if not inc[i]]
        heapq.heapify(ready)
        order: list[int] = []
        aborts: Aborts = []

        def drop(i: int) -> None:
            alive.discard(i)
            for j in out[i]:
                inc[j].discard(i)
                if not inc[j] and j in alive:
                    heapq.heappush(ready, j)
            for j in inc[i]:
                out[j].discard(i)

        while alive:
            while ready:
                i = heapq.heappop(ready)
                if i not in alive or inc[i]:
                    continue
                order.append(i)
                drop(i)
            if not alive:
                break
            victim = max(alive, key=lambda i: (len(inc[i]) + len(out[i]), i))
            work += len(alive)
            aborts.append((pending[victim], TxnStatus.ABORTED_UNREORDERABLE))
            drop(victim)
        self.last_reorder_work = work
        return sequence([pending[i] for i in order], M), aborts


class Sharp(Policy):
    """Arrival-time cycle detection with abort-free reordering at formation."""

    name = "sharp"

    def __init__(self, max_span: int = 10, reach: Reach | str = Reach.EXACT,
                 bloom_bits: int = 65536, bloom_hashes: int = 8, **_: object):
        super().__init__(max_span, reach)
        self.graph = DepGraph(max_span, reach, bloom_bits, bloom_hashes)

    def on_arrival(self, txn, M, cross_block=False):
        if M != self.graph.next_block:
            raise ValueError(f"orderer at block {M}, graph at {self.graph.next_block}")
        status = self.graph.admit(txn)
        self.last_arrival_work = self.graph.last_arrival_work
        return None if status is TxnStatus.PENDING else status

    def on_block_formation(self, pending, M):
        txns = self.graph.form_block()
        if {t.id for t in txns} != {t.id for t in pending}:
            raise ValueError("orderer and graph disagree on the pending set")
        self.graph.commit_block(M, txns)
        self.graph.prune()
        self.last_reorder_work = self.graph.last_reorder_work
        return txns, []

    def validate(self, txns, number, store):
        return snapshot_check(txns, store)

    def counters(self):
        out = self.graph.stats.as_dict()
        out["graph_nodes"] = len(self.graph)
        return out


_CLASSES = {c.name: c for c in (Fabric, FabricPP, FoccS, FoccL, Sharp)}


def make_policy(name: str, **kw) -> Policy:
    try:
        cls = _CLASSES[name]
    except KeyError:
        raise ValueError(f"unknown policy {name!r}; choose from {', '.join(POLICIES)}") from None
    return cls(**kw)
