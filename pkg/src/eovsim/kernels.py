"""Graph kernels, compiled when available.

Set ``EOV_PURE_PYTHON=1`` to force the pure-Python implementation.
``BACKEND`` names the one in use.
"""
from __future__ import annotations

import os

from . import _kernels_py

if os.environ.get("EOV_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _ckernels as _impl  # type: ignore[attr-defined]
    except ImportError:
        _impl = _kernels_py

BACKEND = "cython" if _impl is not _kernels_py else "python"

splitmix64 = _impl.splitmix64
bloom_mask = _impl.bloom_mask
propagate = _impl.propagate
sweep = _impl.sweep
topo_order = _impl.topo_order


def backends() -> dict:
    """Every importable backend module, keyed by name."""
    out = {"python": _kernels_py}
    try:
        from . import _ckernels  # type: ignore[attr-defined]
        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
