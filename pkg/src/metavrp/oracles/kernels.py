"""Kernel backend selection.

The compiled extension is used when it was built; set ``METAVRP_PURE_PYTHON=1``
to force the pure-Python implementation.
"""

import os

from . import _kernels_py

if os.environ.get("METAVRP_PURE_PYTHON", "") not in ("", "0"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:
        _impl = _kernels_py

BACKEND = "python" if _impl is _kernels_py else "compiled"

held_karp = _impl.held_karp
nearest_neighbor = _impl.nearest_neighbor
tour_length = _impl.tour_length
local_search = _impl.local_search


def backends():
    """Every importable backend, keyed by name (used by tests and benchmarks)."""
    out = {"python": _kernels_py}
    try:
        from . import _kernels
    except ImportError:
        return out
    out["compiled"] = _kernels
    return out
