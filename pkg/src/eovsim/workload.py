"""Smallbank-style workloads, contracts, and trace files."""
from __future__ import annotations

import json
import math
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, Optional

INITIAL_BALANCE = 10_000
KINDS = ("modified_smallbank", "create_account", "mixed", "update", "noop")


class ApplicationError(Exception):
    """The contract itself failed (e.g. unknown account)."""


class TraceFormatError(ValueError):
    pass


def checking(acct: int) -> str:
    return f"c:{acct}"


def saving(acct: int) -> str:
    return f"s:{acct}"


@dataclass(frozen=True)
class WorkloadSpec:
    kind: str = "modified_smallbank"
    accounts: int = 10_000
    hot_fraction: float = 0.01
    write_hot_ratio: float = 10.0
    read_hot_ratio: float = 10.0
    zipf_theta: float = 0.0
    reads_per_txn: int = 4
    writes_per_txn: int = 4

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown workload kind {self.kind!r}")
        if self.accounts < 2:
            raise ValueError("need at least two accounts")
        for name in ("write_hot_ratio", "read_hot_ratio"):
            val = getattr(self, name)
            if not 0 <= val <= 50:
                raise ValueError(f"{name} must lie in [0, 50], got {val}")
        if not 0 < self.hot_fraction < 1:
            raise ValueError("hot_fraction must lie in (0, 1)")
        if self.zipf_theta < 0:
            raise ValueError("zipf_theta must be non-negative")

    @property
    def hot_count(self) -> int:
        return max(1, math.ceil(self.accounts * self.hot_fraction))


@dataclass(frozen=True)
class Proposal:
    id: int
    tick: int
    fn: str
    args: dict = field(default_factory=dict)
    # per-proposal overrides used by hand-written traces
    delay: int = 0
    read_interval: Optional[int] = None


@dataclass
class Trace:
    proposals: list[Proposal]
    spec: Optional[WorkloadSpec] = None

    def __len__(self) -> int:
        return len(self.proposals)

    def __iter__(self) -> Iterator[Proposal]:
        return iter(self.proposals)


def genesis_state(spec: WorkloadSpec) -> list[tuple[str, int]]:
    items = []
    for a in range(spec.accounts):
        items.append((checking(a), INITIAL_BALANCE))
        items.append((saving(a), INITIAL_BALANCE))
    return items


# --------------------------------------------------------------------------
# contracts

Reader = Callable[[str], Any]


def _get(read: Reader, key: str) -> int:
    val = read(key)
    if val is None:
        raise ApplicationError(f"no such account key {key}")
    return val


def _modified(read: Reader, args: dict) -> dict:
    vals = [_get(read, checking(a)) for a in args["reads"]]
    new = sum(vals) // max(1, len(vals)) + 1
    return {checking(a): new for a in args["writes"]}


def _query(read: Reader, args: dict) -> dict:
    _get(read, checking(args["a"]))
    _get(read, saving(args["a"]))
    return {}


def _deposit_checking(read: Reader, args: dict) -> dict:
    a = args["a"]
    return {checking(a): _get(read, checking(a)) + args["amount"]}


def _write_check(read: Reader, args: dict) -> dict:
    a, amount = args["a"], args["amount"]
    bal = _get(read, checking(a))
    total = bal + _get(read, saving(a))
    # overdraft penalty of one unit
    return {checking(a): bal - amount - (1 if total < amount else 0)}


def _transact_saving(read: Reader, args: dict) -> dict:
    a = args["a"]
    return {saving(a): _get(read, saving(a)) + args["amount"]}


def _send_payment(read: Reader, args: dict) -> dict:
    a, b, amount = args["a"], args["b"], args["amount"]
    src = _get(read, checking(a))
    dst = _get(read, checking(b))
    if src < amount:
        raise ApplicationError(f"insufficient funds in {a}")
    return {checking(a): src - amount, checking(b): dst + amount}


def _amalgamate(read: Reader, args: dict) -> dict:
    a, b = args["a"], args["b"]
    sav = _get(read, saving(a))
    chk = _get(read, checking(a))
    dst = _get(read, checking(b))
    return {saving(a): 0, checking(a): 0, checking(b): dst + sav + chk}


def _create_account(read: Reader, args: dict) -> dict:
    a = args["a"]
    return {checking(a): INITIAL_BALANCE, saving(a): INITIAL_BALANCE}


def _noop(read: Reader, args: dict) -> dict:
    return {}


def _kv(read: Reader, args: dict) -> dict:
    # generic contract for hand-written traces: read keys, then blind writes
    for k in args.get("reads", ()):
        read(k)
    return dict(args.get("writes", {}))


CONTRACTS: dict[str, Callable[[Reader, dict], dict]] = {
    "modified": _modified,
    "query": _query,
    "deposit_checking": _deposit_checking,
    "write_check": _write_check,
    "transact_saving": _transact_saving,
    "send_payment": _send_payment,
    "amalgamate": _amalgamate,
    "create_account": _create_account,
    "noop": _noop,
    "kv": _kv,
}


def smallbank_contract(fn: str, args: dict, read: Reader) -> tuple[list[str], dict]:
    """Run one contract; returns the keys read (in order) and the write set.

    ``read`` maps a key to its value in the simulation snapshot, or ``None``.
    """
    try:
        contract = CONTRACTS[fn]
    except KeyError:
        raise ApplicationError(f"unknown contract {fn!r}") from None
    reads: list[str] = []

    def tracking(key: str) -> Any:
        reads.append(key)
        return read(key)

    writes = contract(tracking, args)
    return reads, writes


def read_count(fn: str, args: dict) -> int:
    """Number of reads a contract performs, without running it."""
    if fn in ("modified", "kv"):
        return len(args.get("reads", ()))
    return {
        "query": 2, "deposit_checking": 1, "write_check": 2, "transact_saving": 1,
        "send_payment": 2, "amalgamate": 3, "create_account": 0, "noop": 0,
    }[fn]


# --------------------------------------------------------------------------
# sampling

class ZipfSampler:
    """Bounded Zipf over 1..n with exponent ``theta``, by rejection-inversion.

    Follows Hörmann and Derflinger's method; ``theta == 0`` is uniform.
    """

    def __init__(self, n: int, theta: float):
        if n < 1:
            raise ValueError("n must be positive")
        self.n = n
        self.theta = theta
        self._hx1 = self._hint(1.5) - 1.0
        self._hn = self._hint(n + 0.5)
        self._s = 2.0 - self._hinv(self._hint(2.5) - self._h(2.0))

    def _h(self, x: float) -> float:
        return math.exp(-self.theta * math.log(x))

    def _hint(self, x: float) -> float:
        log_x = math.log(x)
        return _helper2((1.0 - self.theta) * log_x) * log_x

    def _hinv(self, x: float) -> float:
        t = max(x * (1.0 - self.theta), -1.0)
        return math.exp(_helper1(t) * x)

    def sample(self, rng: random.Random) -> int:
        while True:
            u = self._hn + rng.random() * (self._hx1 - self._hn)
            x = self._hinv(u)
            k = min(max(int(x + 0.5), 1), self.n)
            if k - x <= self._s or u >= self._hint(k + 0.5) - self._h(k):
                return k

    def pmf(self, k: int) -> float:
        norm = sum(i ** -self.theta for i in range(1, self.n + 1))
        return k ** -self.theta / norm


def _helper1(x: float) -> float:
    if abs(x) > 1e-8:
        return math.log1p(x) / x
    return 1.0 - x * (0.5 - x * (1.0 / 3.0 - 0.25 * x))


def _helper2(x: float) -> float:
    if abs(x) > 1e-8:
        return math.expm1(x) / x
    return 1.0 + x * 0.5 * (1.0 + x / 3.0 * (1.0 + 0.25 * x))


class _AccountPicker:
    def __init__(self, spec: WorkloadSpec, rng: random.Random):
        self.spec = spec
        self.rng = rng
        self.hot = spec.hot_count
        self.zipf = ZipfSampler(spec.accounts, spec.zipf_theta)

    def skewed(self, hot_ratio: float) -> int:
        if self.rng.random() * 100 < hot_ratio:
            return self.rng.randrange(self.hot)
        return self.rng.randrange(self.hot, self.spec.accounts)

    def distinct(self, count: int, hot_ratio: float) -> list[int]:
        picked: list[int] = []
        while len(picked) < count:
            a = self.skewed(hot_ratio)
            if a not in picked:
                picked.append(a)
        return picked

    def zipfian(self) -> int:
        return self.zipf.sample(self.rng) - 1

    def zipfian_pair(self) -> tuple[int, int]:
        a = self.zipfian()
        while True:
            b = self.zipfian()
            if b != a:
                return a, b


def submit_tick(i: int, rate: int) -> int:
    """Open-loop schedule: proposal ``i`` is submitted at this tick (1 tick = 1 ms)."""
    return i * 1000 // rate


def generate(spec: WorkloadSpec, seed: int, n: int, rate: int = 700) -> Trace:
    rng = random.Random(seed)
    pick = _AccountPicker(spec, rng)
    props = []
    for i in range(n):
        fn, args = _draw(spec, pick, rng, i)
        props.append(Proposal(i, submit_tick(i, rate), fn, args))
    return Trace(props, spec)


_SINGLE = ("deposit_checking", "write_check", "transact_saving")
_PAIR = ("send_payment", "amalgamate")


def _draw(spec: WorkloadSpec, pick: _AccountPicker, rng: random.Random, i: int) -> tuple[str, dict]:
    kind = spec.kind
    if kind == "modified_smallbank":
        return "modified", {
            "reads": pick.distinct(spec.reads_per_txn, spec.read_hot_ratio),
            "writes": pick.distinct(spec.writes_per_txn, spec.write_hot_ratio),
        }
    if kind == "noop":
        return "noop", {}
    if kind == "create_account":
        return "create_account", {"a": spec.accounts + i}
    if kind == "update":
        return _single(pick, rng)
    # mixed: 50% query, 30% single-account modify, 20% two-account modify
    u = rng.random()
    if u < 0.5:
        return "query", {"a": pick.zipfian()}
    if u < 0.8:
        return _single(pick, rng)
    a, b = pick.zipfian_pair()
    fn = _PAIR[rng.randrange(2)]
    if fn == "send_payment":
        return fn, {"a": a, "b": b, "amount": rng.randint(1, 100)}
    return fn, {"a": a, "b": b}


def _single(pick: _AccountPicker, rng: random.Random) -> tuple[str, dict]:
    fn = _SINGLE[rng.randrange(3)]
    return fn, {"a": pick.zipfian(), "amount": rng.randint(1, 100)}


# --------------------------------------------------------------------------
# trace files

def save_trace(trace: Trace, path: str | Path) -> None:
    with open(path, "w") as fh:
        for p in trace.proposals:
            obj = {"id": p.id, "tick": p.tick, "fn": p.fn, "args": p.args}
            if p.delay:
                obj["delay"] = p.delay
            if p.read_interval is not None:
                obj["read_interval"] = p.read_interval
            fh.write(json.dumps(obj, sort_keys=True))
            fh.write("\n")


def load_trace(path: str | Path) -> Trace:
    props = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                ri = obj.get("read_interval")
                props.append(Proposal(int(obj["id"]), int(obj["tick"]), str(obj["fn"]),
                                      dict(obj.get("args", {})), int(obj.get("delay", 0)),
                                      None if ri is None else int(ri)))
            except (ValueError, KeyError, TypeError) as exc:
                raise TraceFormatError(f"{path}:{lineno}: {exc}") from None
    return Trace(props)


def spec_dict(spec: WorkloadSpec) -> dict:
    return asdict(spec)
