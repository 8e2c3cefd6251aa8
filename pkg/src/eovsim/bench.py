"""Wall-clock cost of the ordering-side hooks, measured inside a normal run."""
from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

from . import kernels
from .pipeline import SimConfig, Simulator
from .policies import make_policy
from .workload import Trace


@dataclass
class BenchResult:
    policy: str
    backend: str
    arrivals: int
    formations: int
    seconds: float

    @property
    def ops(self) -> int:
        return self.arrivals + self.formations

    @property
    def ops_per_minute(self) -> float:
        return self.ops * 60 / self.seconds if self.seconds else float("inf")

    def to_dict(self) -> dict:
        return {"policy": self.policy, "backend": self.backend, "arrivals": self.arrivals,
                "formations": self.formations, "seconds": round(self.seconds, 4),
                "ops_per_minute": round(self.ops_per_minute)}


def ordering_throughput(cfg: SimConfig, trace: Optional[Trace] = None) -> BenchResult:
    """Run ``cfg`` once, timing only the arrival and block-formation hooks."""
    policy = make_policy(cfg.policy, max_span=cfg.max_span, reach=cfg.reach,
                         bloom_bits=cfg.bloom_bits, bloom_hashes=cfg.bloom_hashes)
    res = BenchResult(cfg.policy, kernels.BACKEND, 0, 0, 0.0)
    arrive, form = policy.on_arrival, policy.on_block_formation
    clock = time.perf_counter

    def timed_arrival(*a, **kw):
        t0 = clock()
        out = arrive(*a, **kw)
        res.seconds += clock() - t0
        res.arrivals += 1
        return out

    def timed_formation(*a, **kw):
        t0 = clock()
        out = form(*a, **kw)
        res.seconds += clock() - t0
        res.formations += 1
        return out

    policy.on_arrival = timed_arrival  # type: ignore[method-assign]
    policy.on_block_formation = timed_formation  # type: ignore[method-assign]
    Simulator(cfg, trace, policy=policy).run()
    return res
