"""Deterministic execute-order-validate transaction pipeline simulator."""
from .core import (Block, ContractViolation, Dependency, DependencyKind, SeqNum, Transaction,
                   TxnStatus, are_concurrent, classify_dependency, cmp_seq)
from .depgraph import DepGraph, Reach
from .mvstore import MvStore
from .pipeline import SimConfig, SimResult, run
from .policies import POLICIES, make_policy
from .workload import WorkloadSpec, generate

__all__ = [
    "Block", "ContractViolation", "DepGraph", "Dependency", "DependencyKind", "MvStore",
    "POLICIES", "Reach", "SeqNum", "SimConfig", "SimResult", "Transaction", "TxnStatus",
    "WorkloadSpec", "are_concurrent", "classify_dependency", "cmp_seq", "generate",
    "make_policy", "run",
]
