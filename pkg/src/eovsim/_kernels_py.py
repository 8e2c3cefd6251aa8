"""Pure-Python graph kernels. ``_ckernels.pyx`` mirrors these one for one.

Nodes are dense integer slots. Per-slot state lives in parallel lists:
``succ[s]`` maps successor slots to edge labels (``None`` once pruned),
``anc[s]`` is the exact ancestor bitset (bit ``s`` set for the node itself),
``fa[s]``/``fb[s]`` are the two relay bloom filters (lists are ``None`` in
exact mode) and ``age[s]`` the pruning age.
"""
from __future__ import annotations

import heapq

MASK64 = (1 << 64) - 1
SEED_A = 0x9E3779B97F4A7C15
SEED_B = 0xC2B2AE3D27D4EB4F


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return x ^ (x >> 31)


def bloom_mask(key: int, nbits: int, nhash: int) -> int:
    h1 = splitmix64((key ^ SEED_A) & MASK64)
    h2 = splitmix64((key ^ SEED_B) & MASK64) | 1
    mask = 0
    for i in range(nhash):
        mask |= 1 << ((h1 + i * h2) & MASK64) % nbits
    return mask


def propagate(succ, anc, fa, fb, age, starts, add_anc, add_a, add_b, m):
    """OR the new node's sets into everything reachable from ``starts``; set age ``m``."""
    seen = set()
    stack = list(starts)
    bloom = fa is not None
    while stack:
        s = stack.pop()
        if s in seen:
            continue
        out = succ[s]
        if out is None:
            continue
        seen.add(s)
        anc[s] |= add_anc
        if bloom:
            fa[s] |= add_a
            fb[s] |= add_b
        age[s] = m
        for t in out:
            if t not in seen:
                stack.append(t)
    return len(seen)


def sweep(succ, anc, fa, fb, heads):
    """Push ancestor sets down the subgraph reachable from ``heads``, in topological order."""
    seen = set()
    stack = list(heads)
    while stack:
        s = stack.pop()
        if s in seen or succ[s] is None:
            continue
        seen.add(s)
        stack.extend(succ[s])
    indeg = dict.fromkeys(seen, 0)
    for s in seen:
        for t in succ[s]:
            if t in indeg:
                indeg[t] += 1
    ready = sorted(s for s, d in indeg.items() if d == 0)
    bloom = fa is not None
    visited = 0
    while ready:
        s = ready.pop()
        visited += 1
        a = anc[s]
        for t in succ[s]:
            if t not in indeg:
                continue
            anc[t] |= a
            if bloom:
                fa[t] |= fa[s]
                fb[t] |= fb[s]
            indeg[t] -= 1
            if indeg[t] == 0:
                ready.append(t)
    return visited


def topo_order(slots, anc):
    """Order ``slots`` so every ancestor precedes its descendants; ties by slot."""
    idx = sorted(slots)
    n = len(idx)
    if n == 0:
        return []
    base = idx[0]
    off = [s - base for s in idx]
    pmask = 0
    for o in off:
        pmask |= 1 << o
    # ancestor sets restricted to the pending window, shifted down to base
    local = [(anc[s] >> base) & pmask for s in idx]
    indeg = [x.bit_count() - 1 for x in local]
    heap = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(heap)
    done = bytearray(n)
    order = []
    while heap:
        a = heapq.heappop(heap)
        order.append(idx[a])
        done[a] = 1
        for j in range(n):
            if not done[j] and (local[j] >> off[a]) & 1:
                indeg[j] -= 1
                if indeg[j] == 0:
                    heapq.heappush(heap, j)
    if len(order) != n:
        raise ValueError("reachability relation among pending slots is cyclic")
    return order
