"""Backend selection for the numeric kernels.

Numba is used when importable unless ``WINDOWED_CONV_DISABLE_NUMBA`` is set
to a truthy value, in which case every kernel falls back to its numpy
implementation. The flag is read once at import time.
"""
from __future__ import annotations

import os

_FLAG = os.environ.get("WINDOWED_CONV_DISABLE_NUMBA", "").strip().lower()
_DISABLED = _FLAG not in ("", "0", "false", "no")

# the default layer probes TBB and warns on old installs
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

try:
    if _DISABLED:
        raise ImportError("numba disabled by environment")
    import numba
    from numba import njit, prange

    HAS_NUMBA = True
except ImportError:
    numba = None
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn

    prange = range


BACKEND = "numba" if HAS_NUMBA else "numpy"


def set_num_threads(n: int | None) -> None:
    """Set the worker thread count for numba kernels (no-op on numpy)."""
    if n is None:
        env = os.environ.get("WINDOWED_CONV_THREADS")
        if not env:
            return
        n = int(env)
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    if HAS_NUMBA:
        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
