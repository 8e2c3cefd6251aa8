"""CSV rows and JSON documents for finished runs."""
from __future__ import annotations

import csv
import io
import json
from typing import Iterable

from .core import TxnStatus
from .pipeline import SimResult

FORMATS = ("csv", "json")

_ABORTS = [s for s in TxnStatus if s.aborted]
ABORT_COLUMNS = ["abort_" + s.name.lower().removeprefix("aborted_") for s in _ABORTS]

COLUMNS = [
    "policy", "block_size", "write_hot", "read_hot", "client_delay", "read_interval", "seed",
    "raw", "effective", *ABORT_COLUMNS,
    "committed", "in_ledger", "total", "blocks", "duration_ticks", "reach", "max_span", "rate",
    "workload", "zipf",
]


def _num(x: float) -> str | float:
    return round(x, 3)


def row(result: SimResult) -> dict:
    cfg, m, wl = result.config, result.metrics, result.config.workload
    out = {
        "policy": cfg.policy, "block_size": cfg.block_size,
        "write_hot": wl.write_hot_ratio, "read_hot": wl.read_hot_ratio,
        "client_delay": cfg.client_delay, "read_interval": cfg.read_interval, "seed": cfg.seed,
        "raw": _num(m.raw), "effective": _num(m.effective),
    }
    for status, col in zip(_ABORTS, ABORT_COLUMNS):
        out[col] = m.count(status)
    out.update(committed=m.committed, in_ledger=m.in_ledger, total=m.total, blocks=m.blocks,
               duration_ticks=m.duration, reach=cfg.reach, max_span=cfg.max_span, rate=cfg.rate,
               workload=wl.kind, zipf=wl.zipf_theta)
    return out


def document(result: SimResult) -> dict:
    return {"config": result.config.to_dict(), "metrics": result.metrics.to_dict()}


def to_csv(rows: Iterable[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=COLUMNS, lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()


def render(results: list[SimResult], fmt: str) -> str:
    if fmt == "csv":
        return to_csv(row(r) for r in results)
    if fmt == "json":
        docs = [document(r) for r in results]
        return json.dumps(docs[0] if len(docs) == 1 else docs, indent=2, sort_keys=False) + "\n"
    raise ValueError(f"unknown report format {fmt!r}; choose from {', '.join(FORMATS)}")
