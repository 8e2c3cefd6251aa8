"""Command-line entry point: ``eovsim {run,sweep,verify,gen-trace,bench}``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Optional, Sequence

from .bench import ordering_throughput
from .pipeline import ConfigError, Ledger, SimConfig, run, with_overrides
from .policies import POLICIES
from .report import FORMATS, render
from .workload import KINDS, TraceFormatError, generate, load_trace, save_trace

log = logging.getLogger("eovsim.cli")

# flag dest -> (SimConfig or WorkloadSpec field)
_SIM_FLAGS = {
    "policy": "policy", "block_size": "block_size", "block_timeout": "block_timeout",
    "max_span": "max_span", "rate": "rate", "client_delay": "client_delay",
    "read_interval": "read_interval", "validation_cost": "validation_cost", "reach": "reach",
    "bloom_bits": "bloom_bits", "bloom_hashes": "bloom_hashes", "txns": "txns", "seed": "seed",
}
_WORKLOAD_FLAGS = {
    "write_hot": "write_hot_ratio", "read_hot": "read_hot_ratio", "workload": "kind",
    "accounts": "accounts", "zipf": "zipf_theta", "hot_fraction": "hot_fraction",
}

# sweep axis name -> field accepted by with_overrides
AXES = {
    "block-size": "block_size", "write-hot": "write_hot_ratio", "read-hot": "read_hot_ratio",
    "client-delay": "client_delay", "read-interval": "read_interval", "max-span": "max_span",
    "rate": "rate", "zipf": "zipf_theta", "txns": "txns",
}
_FLOAT_AXES = {"write_hot_ratio", "read_hot_ratio", "zipf_theta"}


def _sim_options(p: argparse.ArgumentParser) -> None:
    s = argparse.SUPPRESS
    g = p.add_argument_group("simulation")
    g.add_argument("--config", metavar="FILE", help="JSON file of config fields; flags override it")
    g.add_argument("--policy", choices=POLICIES, default=s, help="concurrency control (default sharp)")
    g.add_argument("--block-size", type=int, default=s, help="txns per block (default 200)")
    g.add_argument("--block-timeout", type=int, default=s,
                   help="ticks before a non-empty partial block is cut (default 2x fill time)")
    g.add_argument("--max-span", type=int, default=s, help="max blocks between snapshot and commit (default 10)")
    g.add_argument("--rate", type=int, default=s, help="proposals per 1000 ticks (default 700)")
    g.add_argument("--client-delay", type=int, default=s, help="ticks from endorsement to orderer (default 0)")
    g.add_argument("--read-interval", type=int, default=s, help="ticks between consecutive reads (default 0)")
    g.add_argument("--validation-cost", type=int, default=s, help="validator ticks per txn (default 1)")
    g.add_argument("--reach", choices=("bloom", "exact"), default=s, help="reachability representation (default bloom)")
    g.add_argument("--bloom-bits", type=int, default=s, help="bits per bloom filter (default 65536)")
    g.add_argument("--bloom-hashes", type=int, default=s, help="hash functions per key (default 8)")
    g.add_argument("--txns", type=int, default=s, help="proposals to generate (default 10000)")
    g.add_argument("--seed", type=int, default=s, help="workload seed (default 1)")
    w = p.add_argument_group("workload")
    w.add_argument("--workload", choices=KINDS, default=s, help="generator kind (default modified_smallbank)")
    w.add_argument("--accounts", type=int, default=s, help="number of accounts (default 10000)")
    w.add_argument("--zipf", type=float, default=s, help="zipf skew for update/mixed kinds (default 0)")
    w.add_argument("--write-hot", type=float, default=s, help="percent of writes on hot accounts (default 10)")
    w.add_argument("--read-hot", type=float, default=s, help="percent of reads on hot accounts (default 10)")
    w.add_argument("--hot-fraction", type=float, default=s, help="share of accounts that are hot (default 0.01)")
    w.add_argument("--trace", metavar="FILE", help="replay this trace instead of generating one")


def build_config(ns: argparse.Namespace) -> SimConfig:
    cfg = SimConfig()
    if getattr(ns, "config", None):
        try:
            raw = json.loads(Path(ns.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {ns.config}: {exc}") from None
        if not isinstance(raw, dict):
            raise ConfigError("config file must hold a JSON object")
        merged = cfg.to_dict()
        merged["block_timeout"] = None
        wl = dict(merged.pop("workload"))
        wl.update(raw.pop("workload", None) or {})
        unknown = set(raw) - set(merged)
        if unknown:
            raise ConfigError(f"unknown config fields: {', '.join(sorted(unknown))}")
        merged.update(raw)
        merged["workload"] = wl
        try:
            cfg = SimConfig.from_dict(merged)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from None
    kw = {}
    for dest, name in {**_SIM_FLAGS, **_WORKLOAD_FLAGS}.items():
        if hasattr(ns, dest):
            kw[name] = getattr(ns, dest)
    try:
        cfg = with_overrides(cfg, **kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    cfg.check()
    return cfg


def _load(ns: argparse.Namespace):
    if not getattr(ns, "trace", None):
        return None
    try:
        return load_trace(ns.trace)
    except OSError as exc:
        raise ConfigError(f"cannot read trace {ns.trace}: {exc}") from None


# --------------------------------------------------------------------------
# subcommands

def _config_and_trace(ns: argparse.Namespace):
    trace = _load(ns)
    if trace is not None:
        ns.txns = len(trace)
    return build_config(ns), trace


def cmd_run(ns: argparse.Namespace) -> int:
    cfg, trace = _config_and_trace(ns)
    result = run(cfg, trace)
    out = Path(ns.out)
    out.mkdir(parents=True, exist_ok=True)
    result.ledger.save(out / "ledger.json")
    (out / f"report.{ns.format}").write_text(render([result], ns.format))
    m = result.metrics
    print(f"{cfg.policy}: committed {m.committed}/{m.total} in {m.blocks} blocks, "
          f"raw {m.raw:.1f} effective {m.effective:.1f} per 1000 ticks -> {out}")
    return 0


def _parse_values(text: str, field: str) -> list:
    conv = float if field in _FLOAT_AXES else int
    try:
        vals = [conv(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"bad value list {text!r}") from None
    if not vals:
        raise ConfigError("empty value list")
    return vals


def _parse_policies(text: str) -> list[str]:
    if text == "all":
        return list(POLICIES)
    names = [p.strip() for p in text.split(",") if p.strip()]
    bad = [p for p in names if p not in POLICIES]
    if bad or not names:
        raise ConfigError(f"unknown policies: {', '.join(bad) or text!r}")
    return names


def _parse_seeds(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad seed list {text!r}") from None


def sweep_configs(base: SimConfig, axis: str, values: Sequence, policies: Sequence[str],
                  seeds: Sequence[int]) -> list[SimConfig]:
    field = AXES[axis]
    cfgs = []
    for v in values:
        for seed in seeds:
            for pol in policies:
                try:
                    cfg = with_overrides(base, **{field: v, "seed": seed, "policy": pol})
                except ValueError as exc:
                    raise ConfigError(str(exc)) from None
                cfg.check()
                cfgs.append(cfg)
    return cfgs


def _run_point(cfg: SimConfig):
    res = run(cfg)
    # the store and ledger are large and unused by the report
    res.ledger.blocks.clear()
    res.store = None  # type: ignore[assignment]
    return res


def cmd_sweep(ns: argparse.Namespace) -> int:
    base = build_config(ns)
    field = AXES[ns.axis]
    seeds = _parse_seeds(ns.seeds) if ns.seeds else [base.seed]
    cfgs = sweep_configs(base, ns.axis, _parse_values(ns.values, field),
                         _parse_policies(ns.policies), seeds)
    if ns.jobs > 1:
        with ProcessPoolExecutor(ns.jobs) as pool:
            results = list(pool.map(_run_point, cfgs))
    else:
        results = [_run_point(c) for c in cfgs]
    text = render(results, ns.format)
    if ns.out == "-":
        sys.stdout.write(text)
    else:
        out = Path(ns.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"sweep.{ns.format}").write_text(text)
        print(f"{len(results)} runs -> {out / f'sweep.{ns.format}'}")
    return 0


def cmd_verify(ns: argparse.Namespace) -> int:
    from .oracle import verify_serializable

    try:
        ledger = Ledger.load(ns.ledger)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"cannot read ledger {ns.ledger}: {exc}") from None
    v = verify_serializable(ledger)
    n = len(ledger.committed())
    if v.ok:
        print(f"ok: {n} committed txns, {v.edges} dependencies, {v.anti_rw} anti-rw")
        return 0
    print(f"NOT serializable: {n} committed txns")
    for p in v.problems:
        print(f"  problem: {p}")
    for d in v.cycle:
        print(f"  t{d.src} -[{d.kind.value}]-> t{d.dst}")
    return 1


def cmd_gen_trace(ns: argparse.Namespace) -> int:
    cfg = build_config(ns)
    trace = generate(cfg.workload, cfg.seed, cfg.txns, cfg.rate)
    save_trace(trace, ns.output)
    print(f"{len(trace)} proposals -> {ns.output}")
    return 0


def cmd_bench(ns: argparse.Namespace) -> int:
    cfg, trace = _config_and_trace(ns)
    res = ordering_throughput(cfg, trace)
    if ns.format == "json":
        print(json.dumps(res.to_dict(), indent=2))
    else:
        print(f"{res.policy} [{res.backend}]: {res.ops} admit+form ops in {res.seconds:.3f}s "
              f"= {res.ops_per_minute:,.0f} ops/min")
    return 0


# --------------------------------------------------------------------------

def parser() -> argparse.ArgumentParser:
    top = argparse.ArgumentParser(prog="eovsim", description=__doc__.splitlines()[0],
                                  epilog="Set EOV_LOG=debug|info|warning to choose the log level.")
    sub = top.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("run", help="simulate one configuration")
    _sim_options(p)
    p.add_argument("--out", default="out", help="output directory for ledger.json and report (default out)")
    p.add_argument("--format", choices=FORMATS, default="json", help="report format (default json)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="one row per (value, seed, policy) along a single axis")
    _sim_options(p)
    p.add_argument("--axis", required=True, choices=sorted(AXES), help="parameter to vary")
    p.add_argument("--values", required=True, help="comma-separated values for the axis")
    p.add_argument("--policies", default="all", help="comma-separated policies or 'all' (default all)")
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    p.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
    p.add_argument("--out", default="out", help="output directory, or '-' for stdout (default out)")
    p.add_argument("--format", choices=FORMATS, default="csv", help="report format (default csv)")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("verify", help="check a saved ledger for conflict-serializability")
    p.add_argument("ledger", help="ledger.json written by 'run'")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("gen-trace", help="write a generated workload as a JSON-lines trace")
    _sim_options(p)
    p.add_argument("output", help="trace file to write")
    p.set_defaults(func=cmd_gen_trace)

    p = sub.add_parser("bench", help="wall-clock throughput of the ordering-side hooks")
    _sim_options(p)
    p.add_argument("--format", choices=FORMATS, default="csv", help="json for a machine-readable line")
    p.set_defaults(func=cmd_bench)
    return top


def _setup_logging() -> None:
    name = os.environ.get("EOV_LOG", "warning").upper()
    level = logging.getLevelName(name)
    if not isinstance(level, int):
        level = logging.WARNING
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    ap = parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return ns.func(ns)
    except (ConfigError, TraceFormatError) as exc:
        print(f"eovsim: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
