"""Reference checkers: conflict graphs, serializability, brute-force reorderability."""
from __future__ import annotations

import itertools
import random
from collections import defaultdict, deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

from .core import (ContractViolation, Dependency, DependencyKind, SeqNum, Transaction, TxnStatus,
                   classify_dependency)
from .depgraph import DepGraph, Reach
from .mvstore import MvStore

MAX_PENDING = 8


@dataclass
class ConflictGraph:
    nodes: list[int]
    edges: list[Dependency]

    def adjacency(self) -> dict[int, set[int]]:
        adj: dict[int, set[int]] = {n: set() for n in self.nodes}
        for e in self.edges:
            adj[e.src].add(e.dst)
        return adj


@dataclass
class Verdict:
    ok: bool
    cycle: list[Dependency] = field(default_factory=list)
    anti_rw: int = 0
    edges: int = 0
    problems: list[str] = field(default_factory=list)

    def __bool__(self) -> bool:
        return self.ok


# --------------------------------------------------------------------------
# conflict graph of a committed history

def conflict_graph(committed: Iterable[Transaction]) -> tuple[ConflictGraph, list[str]]:
    """Version-based dependency graph of committed txns.

    wr edges come from the writer of the version read, rw edges go to the
    first other writer that replaced it, ww edges join consecutive writers.
    Kinds are labelled from the timestamps. Returns the graph plus a list of
    reads of versions no committed txn wrote (genesis excepted).
    """
    txns = sorted(committed, key=lambda t: t.end_ts)  # type: ignore[arg-type, return-value]
    by_id = {t.id: t for t in txns}
    writers: dict[str, list[tuple[SeqNum, int]]] = defaultdict(list)
    for t in txns:
        if t.end_ts is None:
            raise ContractViolation(f"committed txn {t.id} has no end timestamp")
        for k in t.writeset:
            writers[k].append((t.end_ts, t.id))
    version_owner = {(k, v): i for k, ws in writers.items() for v, i in ws}
    problems = []
    edges: set[Dependency] = set()

    def kind(earlier: Transaction, later: Transaction, access: str) -> DependencyKind:
        conc = later.start_ts < earlier.end_ts  # type: ignore[operator]
        if access == "ww":
            return DependencyKind.CWw if conc else DependencyKind.NWw
        if access == "wr":
            return DependencyKind.NWr
        return DependencyKind.CRw if conc else DependencyKind.NRw

    for k, ws in writers.items():
        for (_, a), (_, b) in zip(ws, ws[1:]):
            edges.add(Dependency(a, b, kind(by_id[a], by_id[b], "ww"), k))
    for t in txns:
        for k, ver in t.readset.items():
            owner = version_owner.get((k, ver))
            if owner is not None and owner != t.id:
                edges.add(Dependency(owner, t.id, kind(by_id[owner], t, "wr"), k))
            elif owner is None and ver.block != 0:
                problems.append(f"txn {t.id} read {k}@{ver}, which no committed txn wrote")
            ws = writers.get(k, [])
            i = 0
            lo, hi = 0, len(ws)
            while lo < hi:
                mid = (lo + hi) // 2
                if ws[mid][0] <= ver:
                    lo = mid + 1
                else:
                    hi = mid
            i = lo
            while i < len(ws) and ws[i][1] == t.id:
                i += 1
            if i < len(ws):
                w = by_id[ws[i][1]]
                if w.end_ts < t.end_ts:  # type: ignore[operator]
                    edges.add(Dependency(t.id, w.id, DependencyKind.AntiRw, k))
                else:
                    edges.add(Dependency(t.id, w.id, kind(t, w, "rw"), k))
    return ConflictGraph([t.id for t in txns], sorted(edges)), problems


def find_cycle(graph: ConflictGraph) -> list[Dependency]:
    """A shortest cycle, or ``[]`` when the graph is acyclic."""
    adj = graph.adjacency()
    indeg = {n: 0 for n in adj}
    for n, outs in adj.items():
        for m in outs:
            indeg[m] += 1
    queue = deque(n for n, d in indeg.items() if d == 0)
    seen = 0
    while queue:
        n = queue.popleft()
        seen += 1
        for m in adj[n]:
            indeg[m] -= 1
            if indeg[m] == 0:
                queue.append(m)
    if seen == len(adj):
        return []
    cyclic = sorted(n for n, d in indeg.items() if d > 0)
    label = {}
    for e in graph.edges:
        label.setdefault((e.src, e.dst), e)
    best: Optional[list[int]] = None
    for start in cyclic:
        # BFS for the shortest path back to ``start``
        parent = {start: None}
        queue = deque([start])
        found = None
        while queue and found is None:
            n = queue.popleft()
            for m in sorted(adj[n]):
                if m == start:
                    found = n
                    break
                if m not in parent and indeg[m] > 0:
                    parent[m] = n
                    queue.append(m)
        if found is None:
            continue
        path = [found]
        while parent[path[-1]] is not None:
            path.append(parent[path[-1]])  # type: ignore[arg-type]
        path.reverse()
        if best is None or len(path) < len(best):
            best = path
            if len(best) == 2:
                break
    assert best is not None
    ring = best + [best[0]]
    return [label[(a, b)] for a, b in zip(ring, ring[1:])]


def verify_serializable(history) -> Verdict:
    """Acyclicity of the committed txns' conflict graph.

    ``history`` is a ledger (anything with ``committed()``) or an iterable of
    committed transactions.
    """
    committed = history.committed() if hasattr(history, "committed") else list(history)
    graph, problems = conflict_graph(committed)
    cycle = find_cycle(graph)
    anti = sum(1 for e in graph.edges if e.kind is DependencyKind.AntiRw)
    return Verdict(not cycle and not problems, cycle, anti, len(graph.edges), problems)


def count_anti_rw(history) -> int:
    return verify_serializable(history).anti_rw


# --------------------------------------------------------------------------
# brute-force reorderability

@dataclass
class Reorderability:
    reorderable: bool
    order: Optional[list[int]] = None
    permutations_tried: int = 0


def _acyclic(nodes: Sequence[int], adj: dict[int, set[int]]) -> bool:
    indeg = {n: 0 for n in nodes}
    for n in nodes:
        for m in adj.get(n, ()):
            if m in indeg:
                indeg[m] += 1
    stack = [n for n in nodes if indeg[n] == 0]
    seen = 0
    while stack:
        n = stack.pop()
        seen += 1
        for m in adj.get(n, ()):
            if m in indeg:
                indeg[m] -= 1
                if indeg[m] == 0:
                    stack.append(m)
    return seen == len(nodes)


def _closure(nodes: Sequence[int], adj: dict[int, set[int]]) -> dict[int, set[int]]:
    reach = {}
    for n in nodes:
        seen = set()
        stack = list(adj.get(n, ()))
        while stack:
            m = stack.pop()
            if m not in seen:
                seen.add(m)
                stack.extend(adj.get(m, ()))
        reach[n] = seen
    return reach


def brute_force_reorderable(committed: Sequence[Transaction], pending: Sequence[Transaction],
                            block: Optional[int] = None) -> Reorderability:
    """Is there an order of ``pending`` (as the next block) with an acyclic graph?

    Every pairwise dependency is derived from the timestamps. Only pending
    pairs depend on the permutation; for those the rw direction must not
    change and the ww direction must follow the order, which is asserted.
    """
    if len(pending) > MAX_PENDING:
        raise ValueError(f"refusing to enumerate {len(pending)}! orders (limit {MAX_PENDING})")
    if block is None:
        block = max((t.end_ts.block for t in committed), default=0) + 1  # type: ignore[union-attr]
    committed = sorted(committed, key=lambda t: t.end_ts)  # type: ignore[arg-type, return-value]
    pend = [replace(t, end_ts=SeqNum(block, i + 1), status=TxnStatus.PENDING) for i, t in enumerate(pending)]
    fixed: dict[int, set[int]] = defaultdict(set)
    for i, a in enumerate(committed):
        for b in committed[i + 1:]:
            for d in classify_dependency(a, b):
                fixed[d.src].add(d.dst)
    first_cp = {}
    for c in committed:
        for p in pend:
            deps = classify_dependency(c, p)
            first_cp[(c.id, p.id)] = deps
            for d in deps:
                fixed[d.src].add(d.dst)
    # pending rw edges are order independent
    rw_kinds = (DependencyKind.CRw, DependencyKind.AntiRw)
    for a, b in itertools.combinations(pend, 2):
        for d in classify_dependency(a, b):
            if d.kind in rw_kinds:
                fixed[d.src].add(d.dst)

    nodes = [t.id for t in committed] + [t.id for t in pend]
    pids = [t.id for t in pend]
    if not _acyclic(nodes, fixed):
        return Reorderability(False, None, 0)
    reach = _closure(nodes, fixed)
    base = {p: reach[p] & set(pids) for p in pids}

    tried = 0
    for perm in itertools.permutations(pend):
        tried += 1
        ordered = [replace(t, end_ts=SeqNum(block, i + 1)) for i, t in enumerate(perm)]
        adj = {p: set(base[p]) for p in pids}
        for i, a in enumerate(ordered):
            for b in ordered[i + 1:]:
                for d in classify_dependency(a, b):
                    if d.kind in rw_kinds:
                        reader = d.src
                        assert d.key in (a.readset if reader == a.id else b.readset), "rw edge must leave the reader"
                        assert d.dst in reach[d.src], "pending rw edge missing from the fixed part"
                    elif d.kind is DependencyKind.CWw:
                        assert (d.src, d.dst) == (a.id, b.id), "ww edge must follow the order"
                        adj[d.src].add(d.dst)
                    else:
                        raise AssertionError(f"pending pair classified {d.kind}")
        if tried == 1 or tried % 97 == 0:
            for c in committed:
                for p in ordered:
                    assert classify_dependency(c, p) == first_cp[(c.id, p.id)], \
                        "edges to committed txns changed with the pending order"
        if _acyclic(pids, adj):
            return Reorderability(True, [t.id for t in perm], tried)
    return Reorderability(False, None, tried)


# --------------------------------------------------------------------------
# admission cross-check on small random instances

@dataclass
class CrossCheckReport:
    instances: int = 0
    admitted: int = 0
    unreorderable: int = 0
    confirmed: int = 0
    false_positive: int = 0
    false_negative: int = 0
    stale: int = 0
    blocks_verified: int = 0
    divergences: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.divergences


@dataclass(frozen=True)
class TxnDraw:
    lag: int                 # snapshot = latest block - lag (clamped at 0)
    reads: tuple[str, ...]
    writes: tuple[str, ...]


def random_instance(rng: random.Random, keys: int = 3, blocks: int = 3,
                    max_pending: int = 6) -> list[list[TxnDraw]]:
    names = [f"k{i}" for i in range(keys)]
    out = []
    for _ in range(blocks):
        batch = []
        for _ in range(rng.randint(1, max_pending)):
            reads = tuple(k for k in names if rng.random() < 0.5)
            writes = tuple(k for k in names if rng.random() < 0.4)
            if not reads and not writes:
                writes = (rng.choice(names),)
            batch.append(TxnDraw(rng.randint(0, 2), reads, writes))
        out.append(batch)
    return out


def cross_check_admission(instances: Iterable[list[list[TxnDraw]]], reach: Reach | str = Reach.EXACT,
                          max_span: int = 3, bloom_bits: int = 65536,
                          bloom_hashes: int = 8) -> CrossCheckReport:
    """Replay each instance through the dependency graph and audit every decision.

    Each batch of draws arrives against a small chain: a txn snapshots the
    block ``lag`` behind the latest, reads its keys there, and is admitted;
    the batch then forms, commits and is applied. Every unreorderable abort
    must be confirmed by :func:`brute_force_reorderable`, and the committed
    history must stay serializable after every block.
    """
    rep = CrossCheckReport()
    for n, inst in enumerate(instances):
        rep.instances += 1
        keys = sorted({k for batch in inst for d in batch for k in d.reads + d.writes})
        store = MvStore((k, 0) for k in keys)
        g = DepGraph(max_span=max_span, reach=reach, bloom_bits=bloom_bits, bloom_hashes=bloom_hashes)
        committed: list[Transaction] = []
        tid = 0
        for batch in inst:
            M = g.next_block
            pending: list[Transaction] = []
            for d in batch:
                tid += 1
                snap = max(0, store.latest_block - d.lag)
                start = SeqNum.of_snapshot(snap)
                rs = {}
                for k in d.reads:
                    hit = store.version_before(k, start)
                    if hit is not None:
                        rs[k] = hit[0]
                t = Transaction(tid, start, rs, {k: tid for k in d.writes})
                status = g.admit(t)
                if status is TxnStatus.PENDING:
                    rep.admitted += 1
                    pending.append(t)
                    continue
                if status is TxnStatus.ABORTED_STALE_SPAN:
                    rep.stale += 1
                    continue
                if status is TxnStatus.ABORTED_FALSE_POSITIVE:
                    rep.false_positive += 1
                    verdict = brute_force_reorderable(committed, pending + [t], M)
                    if not verdict.reorderable:
                        rep.divergences.append(f"instance {n}: txn {tid} flagged false positive but is unreorderable")
                    continue
                rep.unreorderable += 1
                verdict = brute_force_reorderable(committed, pending + [t], M)
                if verdict.reorderable:
                    rep.divergences.append(
                        f"instance {n}: txn {tid} aborted but order {verdict.order} is serializable")
                else:
                    rep.confirmed += 1
            txns = g.form_block()
            if not txns:
                continue
            g.commit_block(M, txns)
            g.prune()
            store.apply_block(M, [(t.end_ts.pos, t.writeset) for t in txns])  # type: ignore[union-attr]
            for t in txns:
                t.status = TxnStatus.COMMITTED
            committed.extend(txns)
            verdict = verify_serializable(committed)
            rep.blocks_verified += 1
            if not verdict.ok:
                rep.divergences.append(f"instance {n}: block {M} not serializable: {verdict.cycle}")
        rep.false_negative += g.stats.false_negative
        if g.stats.false_negative:
            rep.divergences.append(f"instance {n}: {g.stats.false_negative} bloom false negatives")
    return rep
