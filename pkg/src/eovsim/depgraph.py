"""Transaction dependency graph for arrival-time cycle detection and reordering.

Every admitted transaction gets a dense integer slot in admission order; the
slot doubles as the consensus tie-break when ordering a block. Reachability is
kept per node as an exact ancestor bitset (bit ``s`` set when slot ``s`` can
reach the node, the node's own bit included). In bloom mode each node also
carries two relay bloom filters over the same relation; the active one drives
abort decisions and the exact bitset classifies any disagreement.
"""
from __future__ import annotations

import bisect
import enum
import heapq
from collections import Counter
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Iterable, Iterator, Optional

from . import kernels
from .core import ContractViolation, DependencyKind, SeqNum, Transaction, TxnStatus

REORDERABLE = TxnStatus.PENDING

_ANTI = DependencyKind.AntiRw.value
_CRW = DependencyKind.CRw.value
_NRW = DependencyKind.NRw.value
_NWR = DependencyKind.NWr.value
_CWW = DependencyKind.CWw.value
_NWW = DependencyKind.NWw.value


class Reach(str, enum.Enum):
    EXACT = "exact"
    BLOOM = "bloom"


# --------------------------------------------------------------------------
# committed access indices

class MemoryIndex:
    """Ordered map ``(key, commit seq) -> txn id``, grouped by key.

    Appends arrive in commit order, so each key's run stays sorted and range
    scans are a bisect followed by a slice.
    """

    def __init__(self) -> None:
        self._seqs: dict[str, list[SeqNum]] = {}
        self._ids: dict[str, list[int]] = {}

    def append(self, key: str, seq: SeqNum, txn_id: int) -> None:
        seqs = self._seqs.get(key)
        if seqs is None:
            self._seqs[key] = [seq]
            self._ids[key] = [txn_id]
            return
        if seq < seqs[-1]:
            raise ContractViolation(f"index entry {key}@{seq} appended after {seqs[-1]}")
        seqs.append(seq)
        self._ids[key].append(txn_id)

    def last(self, key: str) -> Optional[tuple[SeqNum, int]]:
        seqs = self._seqs.get(key)
        if not seqs:
            return None
        return seqs[-1], self._ids[key][-1]

    def before(self, key: str, seq: SeqNum) -> Optional[tuple[SeqNum, int]]:
        seqs = self._seqs.get(key)
        if not seqs:
            return None
        i = bisect.bisect_left(seqs, seq)
        if i == 0:
            return None
        return seqs[i - 1], self._ids[key][i - 1]

    def range_from(self, key: str, seq: SeqNum) -> list[tuple[SeqNum, int]]:
        seqs = self._seqs.get(key)
        if not seqs:
            return []
        i = bisect.bisect_left(seqs, seq)
        return list(zip(seqs[i:], self._ids[key][i:]))

    def entries(self, key: str) -> list[tuple[SeqNum, int]]:
        return list(zip(self._seqs.get(key, ()), self._ids.get(key, ())))

    def keys(self) -> Iterator[str]:
        return iter(self._seqs)

    def close(self) -> None:
        pass


class LogIndex(MemoryIndex):
    """:class:`MemoryIndex` backed by an append-only log file.

    Lines are ``key<TAB>block:pos<TAB>txn``; the log is replayed on open.
    """

    def __init__(self, path: str | Path):
        super().__init__()
        self.path = Path(path)
        if self.path.exists():
            with open(self.path) as fh:
                for lineno, line in enumerate(fh, 1):
                    line = line.rstrip("\n")
                    if not line:
                        continue
                    try:
                        key, seq, txn = line.split("\t")
                        super().append(key, SeqNum.parse(seq), int(txn))
                    except ValueError as exc:
                        raise ValueError(f"{self.path}:{lineno}: {exc}") from None
        self._fh = open(self.path, "a", buffering=1)  # line buffered: each entry hits the file

    def append(self, key: str, seq: SeqNum, txn_id: int) -> None:
        super().append(key, seq, txn_id)
        self._fh.write(f"{key}\t{seq}\t{txn_id}\n")

    def close(self) -> None:
        self._fh.close()


class IndexKind(str, enum.Enum):
    BEFORE = "Before"
    LAST = "Last"
    RANGE_FROM = "RangeFrom"


class AccessIndices:
    """Committed writers/readers (``cw``/``cr``) and pending ones (``pw``/``pr``)."""

    def __init__(self, cw: Optional[MemoryIndex] = None, cr: Optional[MemoryIndex] = None):
        self.cw = cw if cw is not None else MemoryIndex()
        self.cr = cr if cr is not None else MemoryIndex()
        # key -> pending txn ids in arrival order (dicts keep insertion order)
        self.pw: dict[str, dict[int, None]] = {}
        self.pr: dict[str, dict[int, None]] = {}

    def query(self, kind: IndexKind | str, key: str, seq: Optional[SeqNum] = None) -> list[int]:
        kind = IndexKind(kind)
        if kind is IndexKind.LAST:
            hit = self.cw.last(key)
            return [] if hit is None else [hit[1]]
        if seq is None:
            raise ContractViolation(f"{kind.value} query needs a sequence number")
        if kind is IndexKind.BEFORE:
            hit = self.cw.before(key, seq)
            return [] if hit is None else [hit[1]]
        return [i for _, i in self.cw.range_from(key, seq)]

    def add_pending(self, txn: Transaction) -> None:
        for k in txn.readset:
            self.pr.setdefault(k, {})[txn.id] = None
        for k in txn.writeset:
            self.pw.setdefault(k, {})[txn.id] = None

    def drop_pending(self, txn: Transaction) -> None:
        for idx, keys in ((self.pr, txn.readset), (self.pw, txn.writeset)):
            for k in keys:
                ids = idx.get(k)
                if ids is not None:
                    ids.pop(txn.id, None)
                    if not ids:
                        del idx[k]


# --------------------------------------------------------------------------
# the graph

@dataclass
class GraphStats:
    admitted: int = 0
    unreorderable: int = 0
    stale_span: int = 0
    false_positive: int = 0
    false_negative: int = 0
    cycle_checks: int = 0
    traversal_visits: int = 0
    sweep_visits: int = 0
    ww_edges: int = 0
    pruned: int = 0
    relay_swaps: int = 0
    max_nodes: int = 0

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


class DepGraph:
    def __init__(self, max_span: int = 10, reach: Reach | str = Reach.EXACT,
                 bloom_bits: int = 65536, bloom_hashes: int = 8,
                 indices: Optional[AccessIndices] = None):
        if max_span < 1:
            raise ContractViolation("max_span must be at least 1")
        self.max_span = max_span
        self.reach = Reach(reach)
        self.bloom_bits = bloom_bits
        self.bloom_hashes = bloom_hashes
        self.indices = indices if indices is not None else AccessIndices()
        self.next_block = 1
        self.stats = GraphStats()

        self._txn: list[Optional[Transaction]] = []
        self._succ: list[Optional[dict[int, str]]] = []
        self._anc: list[int] = []
        self._age: list[int] = []
        self._block: list[int] = []        # commit block, 0 while pending
        self._slot: dict[int, int] = {}
        self._pending: list[int] = []
        self._age_heap: list[tuple[int, int]] = []
        self._live_per_block: Counter[int] = Counter()
        self._live = 0

        bloom = self.reach is Reach.BLOOM
        self._mask: list[int] = []
        self._fa: Optional[list[int]] = [] if bloom else None
        self._fb: Optional[list[int]] = [] if bloom else None
        self._active = 0                   # 0 tests with _fa, 1 with _fb
        self._anchor = [1, 1]              # first block each filter is complete for

        # per-call work counters, read by the pipeline for latency metrics
        self.last_arrival_work = 0
        self.last_reorder_work = 0

    # -- lookups ---------------------------------------------------------
    def __contains__(self, txn_id: int) -> bool:
        return txn_id in self._slot

    def __len__(self) -> int:
        return self._live

    def node(self, txn_id: int) -> Transaction:
        return self._txn[self._slot[txn_id]]  # type: ignore[return-value]

    def live_ids(self) -> list[int]:
        return sorted(self._slot)

    def pending_ids(self) -> list[int]:
        return [self._txn[s].id for s in self._pending]  # type: ignore[union-attr]

    def age(self, txn_id: int) -> int:
        return self._age[self._slot[txn_id]]

    def successors(self, txn_id: int) -> dict[int, str]:
        succ = self._succ[self._slot[txn_id]] or {}
        return {self._txn[s].id: lab for s, lab in succ.items() if self._txn[s] is not None}

    def edges(self) -> list[tuple[int, int, str]]:
        out = []
        for s in self._slot.values():
            for t, lab in (self._succ[s] or {}).items():
                if self._txn[t] is not None:
                    out.append((self._txn[s].id, self._txn[t].id, lab))  # type: ignore[union-attr]
        return sorted(out)

    def reaches(self, src: int, dst: int) -> bool:
        """Exact test: is there a path ``src -> ... -> dst`` (or src == dst)?"""
        return bool((self._anc[self._slot[dst]] >> self._slot[src]) & 1)

    def bloom_reaches(self, src: int, dst: int) -> bool:
        if self._fa is None:
            raise ContractViolation("bloom filters exist only in bloom mode")
        s, d = self._slot[src], self._slot[dst]
        f = (self._fa if self._active == 0 else self._fb)[d]  # type: ignore[index]
        return f & self._mask[s] == self._mask[s]

    def ancestors(self, txn_id: int) -> set[int]:
        """Live nodes that reach ``txn_id``, itself included."""
        a = self._anc[self._slot[txn_id]]
        return {i for i, s in self._slot.items() if (a >> s) & 1}

    def earliest_committed_block(self) -> int:
        live = [b for b, n in self._live_per_block.items() if n > 0]
        return min(live) if live else self.next_block

    @property
    def relay_anchors(self) -> tuple[int, int]:
        """(anchor of the testing filter, anchor of the collecting filter)."""
        return self._anchor[self._active], self._anchor[1 - self._active]

    # -- dependency resolution ------------------------------------------
    def _resolve(self, txn: Transaction) -> tuple[dict[int, str], dict[int, str]]:
        """Predecessor and successor slots of ``txn`` with edge labels."""
        idx = self.indices
        start = txn.start_ts
        slot = self._slot
        tid = txn.id
        pred: dict[int, str] = {}
        succ: dict[int, str] = {}

        for r in txn.readset:
            for _, w in idx.cw.range_from(r, start):
                s = slot.get(w)
                if s is not None and w != tid:
                    succ[s] = _ANTI
            for w in idx.pw.get(r, ()):
                if w != tid:
                    succ[slot[w]] = _CRW
            hit = idx.cw.before(r, start)
            if hit is not None:
                s = slot.get(hit[1])
                if s is not None:
                    pred.setdefault(s, _NWR)

        for k in txn.writeset:
            last = idx.cw.last(k)
            floor = SeqNum(0, 0)
            if last is not None:
                floor = last[0]
                s = slot.get(last[1])
                if s is not None:
                    pred.setdefault(s, _CWW if start < last[0] else _NWW)
            # older readers are ordered before ``last`` already
            for seq, r in idx.cr.range_from(k, floor):
                s = slot.get(r)
                if s is not None and r != tid:
                    pred.setdefault(s, _CRW if start < seq else _NRW)
            for r in idx.pr.get(k, ()):
                if r != tid:
                    pred.setdefault(slot[r], _CRW)
        return pred, succ

    def resolve_dependencies(self, txn: Transaction) -> tuple[set[int], set[int]]:
        pred, succ = self._resolve(txn)
        ids = lambda slots: {self._txn[s].id for s in slots}  # type: ignore[union-attr]  # noqa: E731
        return ids(pred), ids(succ)

    # -- arrival ---------------------------------------------------------
    def admit(self, txn: Transaction) -> TxnStatus:
        """Admit ``txn`` as pending or return the abort status.

        Returns :data:`REORDERABLE` (``Pending``) on success.
        """
        if txn.id in self._slot:
            raise ContractViolation(f"txn {txn.id} already in the graph")
        M = self.next_block
        self.last_arrival_work = 0
        if txn.snapshot <= M - self.max_span:
            self.stats.stale_span += 1
            return TxnStatus.ABORTED_STALE_SPAN

        pred, succ = self._resolve(txn)
        anc = self._anc
        work = len(pred) + len(succ)

        if pred and succ:
            succ_bits = 0
            for s in succ:
                succ_bits |= 1 << s
            exact_cycle = any(anc[p] & succ_bits for p in pred)
            self.stats.cycle_checks += len(pred) * len(succ)
            work += len(pred) * len(succ)
            verdict = exact_cycle
            if self._fa is not None:
                f = self._fa if self._active == 0 else self._fb
                mask = self._mask
                bloom_cycle = any(f[p] & mask[s] == mask[s] for p in pred for s in succ)  # type: ignore[index]
                if bloom_cycle and not exact_cycle:
                    self.stats.false_positive += 1
                    self.last_arrival_work = work
                    return TxnStatus.ABORTED_FALSE_POSITIVE
                if exact_cycle and not bloom_cycle:
                    self.stats.false_negative += 1
            if verdict:
                self.stats.unreorderable += 1
                self.last_arrival_work = work
                return TxnStatus.ABORTED_UNREORDERABLE

        slot = len(self._txn)
        bit = 1 << slot
        my_anc = bit
        for p in pred:
            my_anc |= anc[p]
        self._txn.append(txn)
        self._succ.append(dict(succ))
        self._anc.append(my_anc)
        self._age.append(M)
        self._block.append(0)
        self._slot[txn.id] = slot
        self._pending.append(slot)
        self._live += 1
        for p, lab in pred.items():
            self._succ[p][slot] = lab  # type: ignore[index]

        add_a = add_b = 0
        if self._fa is not None:
            m = kernels.bloom_mask(txn.id, self.bloom_bits, self.bloom_hashes)
            self._mask.append(m)
            add_a = add_b = m
            for p in pred:
                add_a |= self._fa[p]
                add_b |= self._fb[p]  # type: ignore[index]
            self._fa.append(add_a)
            self._fb.append(add_b)  # type: ignore[union-attr]
        else:
            self._mask.append(0)

        if succ:
            visited = kernels.propagate(self._succ, anc, self._fa, self._fb, self._age,
                                        list(succ), my_anc, add_a, add_b, M)
            self.stats.traversal_visits += visited
            work += visited
        self.indices.add_pending(txn)
        self.stats.admitted += 1
        self.stats.max_nodes = max(self.stats.max_nodes, self._live)
        self.last_arrival_work = work
        return REORDERABLE

    # -- block formation -------------------------------------------------
    def form_block(self) -> list[Transaction]:
        """Commit order for every pending txn; assigns end timestamps and restores ww."""
        if not self._pending:
            self.last_reorder_work = 0
            return []
        order = kernels.topo_order(self._pending, self._anc)
        M = self.next_block
        txns = []
        for i, s in enumerate(order, 1):
            t = self._txn[s]
            t.set_end(SeqNum(M, i))  # type: ignore[union-attr]
            txns.append(t)
        n = len(order)
        self.last_reorder_work = n * n
        self.restore_ww(order)
        self._pending = []
        return txns  # type: ignore[return-value]

    def restore_ww(self, order: list[int]) -> int:
        """Link consecutive same-key pending writers along ``order``; returns edges added."""
        pos = {s: i for i, s in enumerate(order)}
        slot = self._slot
        anc = self._anc
        fa, fb = self._fa, self._fb
        heads: set[int] = set()
        added = 0
        for ids in self.indices.pw.values():
            if len(ids) < 2:
                continue
            chain = sorted((slot[i] for i in ids), key=pos.__getitem__)
            for a, b in zip(chain, chain[1:]):
                if (anc[b] >> a) & 1:
                    continue
                self._succ[a][b] = _CWW  # type: ignore[index]
                anc[b] |= anc[a]
                if fa is not None:
                    fa[b] |= fa[a]
                    fb[b] |= fb[a]  # type: ignore[index]
                heads.add(b)
                added += 1
        if heads:
            visited = kernels.sweep(self._succ, anc, fa, fb, sorted(heads))
            self.stats.sweep_visits += visited
            self.last_reorder_work += visited
        self.stats.ww_edges += added
        return added

    def commit_block(self, number: int, txns: Iterable[Transaction]) -> None:
        if number != self.next_block:
            raise ContractViolation(f"commit of block {number}, expected {self.next_block}")
        idx = self.indices
        for t in txns:
            s = self._slot[t.id]
            if self._block[s]:
                raise ContractViolation(f"txn {t.id} committed twice")
            seq = t.end_ts
            if seq is None or seq.block != number:
                raise ContractViolation(f"txn {t.id} has end {seq}, not in block {number}")
            for k, ver in t.readset.items():
                last = idx.cw.last(k)
                if (last[0] if last is not None else None) == ver or (last is None and ver.block == 0):
                    idx.cr.append(k, seq, t.id)
            for k in t.writeset:
                idx.cw.append(k, seq, t.id)
            idx.drop_pending(t)
            self._block[s] = number
            self._live_per_block[number] += 1
            heapq.heappush(self._age_heap, (self._age[s], s))
        self.next_block = number + 1

    def discard_pending(self) -> None:
        """Forget every pending txn and rebuild exact reachability without them.

        Bloom filters keep the dropped bits; that can only cost false positives.
        """
        if not self._pending:
            return
        gone = set(self._pending)
        for s in gone:
            self._remove(s)
        self._pending = []
        live = sorted(self._slot.values())
        for s in live:
            succ = self._succ[s]
            for d in gone.intersection(succ):  # type: ignore[arg-type]
                del succ[d]  # type: ignore[union-attr]
            self._anc[s] = 1 << s
        self.stats.sweep_visits += kernels.sweep(self._succ, self._anc, None, None, live)

    # -- pruning ---------------------------------------------------------
    def prune(self, M: Optional[int] = None) -> list[int]:
        """Drop committed nodes whose age is below ``M - max_span``."""
        H = (self.next_block if M is None else M) - self.max_span
        heap = self._age_heap
        gone = []
        while heap and heap[0][0] < H:
            a, s = heapq.heappop(heap)
            if self._txn[s] is None:
                continue
            if self._age[s] > a:
                heapq.heappush(heap, (self._age[s], s))
                continue
            gone.append(self._txn[s].id)  # type: ignore[union-attr]
            self._remove(s)
        self.stats.pruned += len(gone)
        if self._fa is not None and not self._pending:
            self._relay()
        return gone

    def _remove(self, s: int) -> None:
        t = self._txn[s]
        if t is None:
            return
        del self._slot[t.id]
        if self._block[s]:
            self._live_per_block[self._block[s]] -= 1
            if self._live_per_block[self._block[s]] == 0:
                del self._live_per_block[self._block[s]]
        else:
            self.indices.drop_pending(t)
        self._txn[s] = None
        self._succ[s] = None
        self._live -= 1

    def _relay(self) -> None:
        # the collecting filter becomes trustworthy once every live committed
        # node was admitted after it was last emptied
        young = 1 - self._active
        if self.earliest_committed_block() < self._anchor[young]:
            return
        old = self._active
        filt = self._fa if old == 0 else self._fb
        for s in self._slot.values():
            filt[s] = 0  # type: ignore[index]
        self._anchor[old] = self.next_block
        self._active = young
        self.stats.relay_swaps += 1

    # -- debug output ----------------------------------------------------
    def to_dot(self) -> str:
        lines = ["digraph deps {"]
        for tid in sorted(self._slot):
            s = self._slot[tid]
            status = "Committed" if self._block[s] else "Pending"
            lines.append(f'  t{tid} [label="{tid}\\n{status}\\nage {self._age[s]}"];')
        for a, b, lab in self.edges():
            lines.append(f'  t{a} -> t{b} [label="{lab}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"
