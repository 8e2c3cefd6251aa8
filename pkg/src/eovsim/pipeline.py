"""Deterministic discrete-event simulation of the execute-order-validate lifecycle.

One tick is one millisecond. Events at the same tick run in a fixed phase
order (commit, endorsement done, arrival, timeout, submit) and then by
transaction id, so a run is a pure function of its configuration.
"""
from __future__ import annotations

import heapq
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional

from .core import Block, SeqNum, Transaction, TxnStatus
from .execution import ApplicationError, Endorsement, dispatch_to_ordering, simulate
from .mvstore import MvStore
from .policies import POLICIES, Policy, make_policy
from .workload import Trace, WorkloadSpec, generate, genesis_state

log = logging.getLogger("eovsim.pipeline")

COMMIT, ENDORSE, ARRIVE, TIMEOUT, SUBMIT = range(5)


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SimConfig:
    policy: str = "sharp"
    block_size: int = 200
    block_timeout: Optional[int] = None
    max_span: int = 10
    rate: int = 700
    client_delay: int = 0
    read_interval: int = 0
    validation_cost: int = 1
    reach: str = "bloom"
    bloom_bits: int = 65536
    bloom_hashes: int = 8
    txns: int = 10_000
    seed: int = 1
    workload: WorkloadSpec = field(default_factory=WorkloadSpec)
    max_resimulations: int = 16

    def check(self) -> None:
        if self.policy not in POLICIES:
            raise ConfigError(f"unknown policy {self.policy!r}")
        if self.block_size < 1:
            raise ConfigError("block_size must be at least 1")
        if self.max_span < 1:
            raise ConfigError("max_span must be at least 1")
        if self.rate < 1:
            raise ConfigError("rate must be positive")
        if self.txns < 1:
            raise ConfigError("txns must be positive")
        for name in ("client_delay", "read_interval", "validation_cost", "max_resimulations"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be non-negative")
        if self.block_timeout is not None and self.block_timeout < 1:
            raise ConfigError("block_timeout must be positive")
        if self.reach not in ("bloom", "exact"):
            raise ConfigError(f"unknown reach mode {self.reach!r}")
        if self.bloom_bits < 64 or self.bloom_hashes < 1:
            raise ConfigError("bloom filter too small")

    @property
    def timeout(self) -> int:
        if self.block_timeout is not None:
            return self.block_timeout
        return max(1, 2 * self.block_size * 1000 // self.rate)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["block_timeout"] = self.timeout
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if isinstance(d.get("workload"), dict):
            d["workload"] = WorkloadSpec(**d["workload"])
        return cls(**d)


# --------------------------------------------------------------------------
# metrics

class Histogram:
    """Counts in power-of-two buckets: 0, 1, 2-3, 4-7, ..."""

    def __init__(self) -> None:
        self.buckets: dict[int, int] = {}
        self.count = 0
        self.total = 0
        self.max = 0

    def add(self, v: int) -> None:
        b = v.bit_length()
        self.buckets[b] = self.buckets.get(b, 0) + 1
        self.count += 1
        self.total += v
        if v > self.max:
            self.max = v

    @property
    def mean(self) -> float:
        return self.total / self.count if self.count else 0.0

    def quantile(self, q: float) -> int:
        """Upper edge of the bucket holding the q-quantile."""
        if not self.count:
            return 0
        need = q * self.count
        seen = 0
        for b in sorted(self.buckets):
            seen += self.buckets[b]
            if seen >= need:
                return 0 if b == 0 else (1 << b) - 1
        return self.max

    def to_dict(self) -> dict:
        labels = {}
        for b in sorted(self.buckets):
            label = "0" if b == 0 else ("1" if b == 1 else f"{1 << (b - 1)}-{(1 << b) - 1}")
            labels[label] = self.buckets[b]
        return {"count": self.count, "mean": round(self.mean, 3), "max": self.max,
                "p50": self.quantile(0.5), "p99": self.quantile(0.99), "buckets": labels}


@dataclass
class Metrics:
    total: int = 0
    in_ledger: int = 0
    committed: int = 0
    blocks: int = 0
    duration: int = 0
    statuses: dict[str, int] = field(default_factory=dict)
    resimulations: int = 0
    arrival_work: Histogram = field(default_factory=Histogram)
    reorder_work: Histogram = field(default_factory=Histogram)
    validation_latency: Histogram = field(default_factory=Histogram)
    commit_latency: Histogram = field(default_factory=Histogram)
    block_fill: Histogram = field(default_factory=Histogram)
    policy_counters: dict[str, Any] = field(default_factory=dict)

    @property
    def raw(self) -> float:
        return self.in_ledger * 1000 / self.duration if self.duration else 0.0

    @property
    def effective(self) -> float:
        return self.committed * 1000 / self.duration if self.duration else 0.0

    def count(self, status: TxnStatus) -> int:
        return self.statuses.get(status.value, 0)

    def to_dict(self) -> dict:
        return {
            "total": self.total, "in_ledger": self.in_ledger, "committed": self.committed,
            "blocks": self.blocks, "duration_ticks": self.duration,
            "raw": round(self.raw, 3), "effective": round(self.effective, 3),
            "statuses": dict(sorted(self.statuses.items())),
            "resimulations": self.resimulations,
            "latency": {
                "arrival_work": self.arrival_work.to_dict(),
                "reorder_work": self.reorder_work.to_dict(),
                "validation_ticks": self.validation_latency.to_dict(),
                "commit_ticks": self.commit_latency.to_dict(),
            },
            "block_fill": self.block_fill.to_dict(),
            "policy": self.policy_counters,
        }


@dataclass
class LedgerBlock:
    number: int
    txns: list[Transaction]
    formed_tick: int
    committed_tick: int = -1

    def block(self) -> Block:
        return Block(self.number, [t.id for t in self.txns], {t.id: t.status for t in self.txns})


@dataclass
class Ledger:
    blocks: list[LedgerBlock] = field(default_factory=list)
    dropped: list[Transaction] = field(default_factory=list)   # aborted before reaching a block
    config: dict = field(default_factory=dict)

    def transactions(self) -> list[Transaction]:
        return [t for b in self.blocks for t in b.txns]

    def committed(self) -> list[Transaction]:
        return [t for t in self.transactions() if t.status is TxnStatus.COMMITTED]

    def to_json(self) -> dict:
        return {
            "config": self.config,
            "blocks": [{"number": b.number, "formed_tick": b.formed_tick,
                        "committed_tick": b.committed_tick,
                        "txns": [t.to_json() for t in b.txns]} for b in self.blocks],
            "dropped": [t.to_json() for t in self.dropped],
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Ledger":
        blocks = [LedgerBlock(b["number"], [Transaction.from_json(t) for t in b["txns"]],
                              b.get("formed_tick", 0), b.get("committed_tick", -1))
                  for b in obj.get("blocks", [])]
        dropped = [Transaction.from_json(t) for t in obj.get("dropped", [])]
        return cls(blocks, dropped, obj.get("config", {}))

    def save(self, path: str | Path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_json(), fh)

    @classmethod
    def load(cls, path: str | Path) -> "Ledger":
        with open(path) as fh:
            return cls.from_json(json.load(fh))


@dataclass
class SimResult:
    config: SimConfig
    metrics: Metrics
    ledger: Ledger
    store: MvStore


# --------------------------------------------------------------------------

class Simulator:
    """One run. ``block_hook(sim, ledger_block)`` fires after every formation."""

    def __init__(self, cfg: SimConfig, trace: Optional[Trace] = None,
                 policy: Optional[Policy] = None,
                 block_hook: Optional[Callable[["Simulator", LedgerBlock], None]] = None):
        cfg.check()
        self.cfg = cfg
        self.trace = trace if trace is not None else generate(cfg.workload, cfg.seed, cfg.txns, cfg.rate)
        spec = self.trace.spec or cfg.workload
        self.store = MvStore(genesis_state(spec))
        self.policy = policy or make_policy(cfg.policy, max_span=cfg.max_span, reach=cfg.reach,
                                            bloom_bits=cfg.bloom_bits, bloom_hashes=cfg.bloom_hashes)
        self.block_hook = block_hook
        self.metrics = Metrics(total=len(self.trace))
        self.ledger = Ledger(config=cfg.to_dict())
        self.next_block = 1
        self.pending: list[Endorsement] = []
        self._events: list[tuple] = []
        self._counter = 0
        self._epoch = 0
        self._validator_free = 0
        self._resims: dict[int, int] = {}
        self._submit_tick: dict[int, int] = {}

    def _push(self, tick: int, prio: int, tid: int, payload: Any) -> None:
        self._counter += 1
        heapq.heappush(self._events, (tick, prio, tid, self._counter, payload))

    def _finish(self, txn: Transaction, status: TxnStatus) -> None:
        txn.status = status
        m = self.metrics.statuses
        m[status.value] = m.get(status.value, 0) + 1

    # -- phases ----------------------------------------------------------
    def _submit(self, now: int, proposal) -> None:
        try:
            e = simulate(proposal, now, self.store, self.cfg.read_interval)
        except ApplicationError as exc:
            log.debug("txn %d failed in simulation: %s", proposal.id, exc)
            t = Transaction(proposal.id, SeqNum.of_snapshot(self.store.latest_block), fn=proposal.fn)
            self._finish(t, TxnStatus.ABORTED_APPLICATION)
            self.ledger.dropped.append(t)
            return
        self._push(e.finish_tick, ENDORSE, e.txn.id, e)

    def _endorsed(self, now: int, e: Endorsement) -> None:
        e.release(self.store)
        stale = self.store.latest_block > e.sim_block
        if stale and self.policy.executor == "lock" and e.finish_tick > e.start_tick:
            n = self._resims.get(e.txn.id, 0)
            if n < self.cfg.max_resimulations:
                self._resims[e.txn.id] = n + 1
                self.metrics.resimulations += 1
                self._submit(now, e.proposal)
                return
        e.cross_block = stale and e.finish_tick > e.start_tick
        arr = dispatch_to_ordering(e, self.cfg.client_delay)
        self._push(arr.tick, ARRIVE, arr.id, e)

    def _arrive(self, now: int, e: Endorsement) -> None:
        status = self.policy.on_arrival(e.txn, self.next_block, e.cross_block)
        self.metrics.arrival_work.add(self.policy.last_arrival_work)
        if status is not None:
            self._finish(e.txn, status)
            self.ledger.dropped.append(e.txn)
            return
        if not self.pending:
            self._epoch += 1
            self._push(now + self.cfg.timeout, TIMEOUT, 0, self._epoch)
        self.pending.append(e)
        if len(self.pending) >= self.cfg.block_size:
            self._form(now)

    def _form(self, now: int) -> None:
        pending = [e.txn for e in self.pending]
        self.pending = []
        self._epoch += 1
        M = self.next_block
        ordered, aborts = self.policy.on_block_formation(pending, M)
        self.metrics.reorder_work.add(self.policy.last_reorder_work)
        for t, status in aborts:
            self._finish(t, status)
            self.ledger.dropped.append(t)
        if not ordered:
            return
        self.next_block += 1
        lb = LedgerBlock(M, ordered, now)
        self.ledger.blocks.append(lb)
        self.metrics.block_fill.add(len(ordered))
        start = max(now, self._validator_free)
        self._validator_free = start + self.cfg.validation_cost * len(ordered)
        self._push(self._validator_free, COMMIT, M, lb)
        if self.block_hook is not None:
            self.block_hook(self, lb)

    def _commit(self, now: int, lb: LedgerBlock) -> None:
        statuses = self.policy.validate(lb.txns, lb.number, self.store)
        effects = []
        for t, st in zip(lb.txns, statuses):
            self._finish(t, st)
            if st is TxnStatus.COMMITTED:
                effects.append((t.end_ts.pos, t.writeset))  # type: ignore[union-attr]
                self.metrics.commit_latency.add(now - self._submit_tick[t.id])
        self.store.apply_block(lb.number, effects)
        lb.committed_tick = now
        self.metrics.validation_latency.add(now - lb.formed_tick)
        self.metrics.blocks += 1
        self.metrics.in_ledger += len(lb.txns)
        self.metrics.committed += len(effects)
        self.metrics.duration = now
        self.store.prune_snapshots(lb.number - self.cfg.max_span)

    def run(self) -> SimResult:
        for p in self.trace:
            self._submit_tick[p.id] = p.tick
            self._push(p.tick, SUBMIT, p.id, p)
        events = self._events
        while events:
            now, prio, _, _, payload = heapq.heappop(events)
            if prio == SUBMIT:
                self._submit(now, payload)
            elif prio == ENDORSE:
                self._endorsed(now, payload)
            elif prio == ARRIVE:
                self._arrive(now, payload)
            elif prio == TIMEOUT:
                if payload == self._epoch and self.pending:
                    self._form(now)
            else:
                self._commit(now, payload)
        self.metrics.policy_counters = self.policy.counters()
        log.info("%s: %d/%d committed in %d blocks", self.cfg.policy,
                 self.metrics.committed, self.metrics.total, self.metrics.blocks)
        return SimResult(self.cfg, self.metrics, self.ledger, self.store)


def run(cfg: SimConfig, trace: Optional[Trace] = None, **kw) -> SimResult:
    return Simulator(cfg, trace, **kw).run()


def with_overrides(cfg: SimConfig, **kw) -> SimConfig:
    """Copy of ``cfg``; workload fields (``write_hot_ratio`` etc.) are routed to the spec."""
    wl_fields = set(WorkloadSpec.__dataclass_fields__)
    wl = {k: kw.pop(k) for k in list(kw) if k in wl_fields}
    if wl:
        kw["workload"] = replace(cfg.workload, **wl)
    return replace(cfg, **kw)
