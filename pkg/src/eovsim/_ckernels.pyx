# cython: language_level=3, boundscheck=False, wraparound=False
"""Compiled twin of ``_kernels_py``; same signatures, same results."""
import heapq

cdef unsigned long long SEED_A = 0x9E3779B97F4A7C15ULL
cdef unsigned long long SEED_B = 0xC2B2AE3D27D4EB4FULL


cdef inline unsigned long long _mix(unsigned long long x) nogil:
    x = x + 0x9E3779B97F4A7C15ULL
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL
    return x ^ (x >> 31)


def splitmix64(x):
    return _mix(<unsigned long long>(x & 0xFFFFFFFFFFFFFFFF))


def bloom_mask(key, Py_ssize_t nbits, int nhash):
    cdef unsigned long long k = <unsigned long long>(key & 0xFFFFFFFFFFFFFFFF)
    cdef unsigned long long h1 = _mix(k ^ SEED_A)
    cdef unsigned long long h2 = _mix(k ^ SEED_B) | 1ULL
    cdef int i
    cdef object one = 1
    mask = 0
    for i in range(nhash):
        mask |= one << <Py_ssize_t>((h1 + <unsigned long long>i * h2) % <unsigned long long>nbits)
    return mask


def propagate(list succ, list anc, fa, fb, list age, starts, add_anc, add_a, add_b, m):
    cdef set seen = set()
    cdef list stack = list(starts)
    cdef bint bloom = fa is not None
    cdef list la, lb
    cdef Py_ssize_t s
    cdef object out
    if bloom:
        la = fa
        lb = fb
    while stack:
        s = stack.pop()
        if s in seen:
            continue
        out = succ[s]
        if out is None:
            continue
        seen.add(s)
        anc[s] = anc[s] | add_anc
        if bloom:
            la[s] = la[s] | add_a
            lb[s] = lb[s] | add_b
        age[s] = m
        for t in out:
            if t not in seen:
                stack.append(t)
    return len(seen)


def sweep(list succ, list anc, fa, fb, heads):
    cdef set seen = set()
    cdef list stack = list(heads)
    cdef Py_ssize_t s, t
    cdef dict indeg
    cdef list ready
    cdef bint bloom = fa is not None
    cdef Py_ssize_t visited = 0
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
    ready = sorted([s for s, d in indeg.items() if d == 0])
    while ready:
        s = ready.pop()
        visited += 1
        a = anc[s]
        for t in succ[s]:
            if t not in indeg:
                continue
            anc[t] = anc[t] | a
            if bloom:
                fa[t] = fa[t] | fa[s]
                fb[t] = fb[t] | fb[s]
            indeg[t] -= 1
            if indeg[t] == 0:
                ready.append(t)
    return visited


def topo_order(slots, list anc):
    cdef Py_ssize_t n = len(slots)
    cdef Py_ssize_t i, j, a
    cdef list order = []
    cdef list heap, local, indeg, off
    cdef list idx = sorted(slots)
    if n == 0:
        return order
    base = idx[0]
    off = [s - base for s in idx]
    pmask = 0
    for i in range(n):
        pmask |= 1 << off[i]
    # ancestor sets restricted to the pending window, shifted down to base
    local = [(anc[s] >> base) & pmask for s in idx]
    indeg = [x.bit_count() - 1 for x in local]
    heap = [i for i in range(n) if indeg[i] == 0]
    heapq.heapify(heap)
    cdef bytearray done = bytearray(n)
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
