"""Compare the compiled and pure-Python graph kernels.

Usage: python benchmarks/bench_kernels.py [--txns N] [--repeat R]

Part one times each kernel on the same synthetic layered graph for every
importable backend. Part two reruns the ordering-side benchmark end to end
in a subprocess per backend (the backend is chosen once at import).
"""
from __future__ import annotations

import argparse
import json
import os
import random
import subprocess
import sys
import timeit

from eovsim.kernels import backends


def layered_graph(n: int, fanout: int, seed: int):
    """Random DAG on ``n`` slots with edges only from lower to higher slots."""
    rng = random.Random(seed)
    succ = [dict() for _ in range(n)]
    for s in range(n - 1):
        for t in rng.sample(range(s + 1, min(n, s + 64)), min(fanout, n - s - 1)):
            succ[s][t] = "rw"
    anc = [1 << s for s in range(n)]
    return succ, anc


def kernel_times(mod, n: int, repeat: int) -> dict:
    succ, anc0 = layered_graph(n, 3, 7)
    fa0 = [0] * n
    age = [0] * n
    slots = list(range(n // 2, n))
    out = {}

    def run_sweep():
        mod.sweep(succ, list(anc0), list(fa0), list(fa0), [0])

    def run_propagate():
        mod.propagate(succ, list(anc0), list(fa0), list(fa0), age, [0], 1 << n, 1, 1, 5)

    # the swept sets make topo_order's input a real reachability relation
    swept = list(anc0)
    mod.sweep(succ, swept, None, None, list(range(n)))

    def run_topo():
        mod.topo_order(slots, swept)

    def run_bloom():
        for k in range(1000):
            mod.bloom_mask(k, 65536, 8)

    for name, fn in (("sweep", run_sweep), ("propagate", run_propagate),
                     ("topo_order", run_topo), ("bloom_mask x1000", run_bloom)):
        out[name] = min(timeit.repeat(fn, number=1, repeat=repeat))
    return out


def end_to_end(backend: str, txns: int) -> dict:
    env = dict(os.environ, EOV_PURE_PYTHON="1" if backend == "python" else "0")
    cmd = [sys.executable, "-m", "eovsim", "bench", "--txns", str(txns), "--format", "json"]
    proc = subprocess.run(cmd, env=env, capture_output=True, text=True, check=True)
    return json.loads(proc.stdout)


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--nodes", type=int, default=2000)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--txns", type=int, default=10000)
    args = ap.parse_args()

    mods = backends()
    results = {name: kernel_times(mod, args.nodes, args.repeat) for name, mod in mods.items()}
    names = list(results["python"])
    print(f"kernels on a {args.nodes}-node DAG (best of {args.repeat}, ms)")
    print(f"{'kernel':<18}" + "".join(f"{b:>12}" for b in mods) + ("     speedup" if "cython" in mods else ""))
    for k in names:
        line = f"{k:<18}" + "".join(f"{results[b][k] * 1e3:>12.2f}" for b in mods)
        if "cython" in mods:
            line += f"{results['python'][k] / results['cython'][k]:>11.2f}x"
        print(line)

    print(f"\nordering hooks, sharp policy, {args.txns} txns")
    for b in mods:
        r = end_to_end(b, args.txns)
        print(f"{r['backend']:<8} {r['ops_per_minute']:>12,} ops/min  ({r['seconds']:.2f}s in hooks)")


if __name__ == "__main__":
    main()
