"""Selection of the numerical backend for the hot blending kernels.

The rasterizer's inner loops exist twice: a numba-jitted implementation
(:mod:`splatseg._kernels_numba`) and a vectorized pure-numpy fallback
(:mod:`splatseg._kernels_numpy`). Both honor the same contracts and are
cross-checked by the test suite; the numba path is simply faster.

The default is numba when it is importable. Set ``SPLATSEG_BACKEND=numpy``
(or ``numba``) in the environment to force a choice, or switch at runtime
with :func:`set_backend` / the :func:`use_backend` context manager.
"""

from __future__ import annotations

import os
from contextlib import contextmanager

# Keep the numba thread pool large enough that worker counts above the core
# count can still be requested (reproducibility across 1/4/8 threads must be
# checkable on small machines). Only effective before numba's first import.
os.environ.setdefault("NUMBA_NUM_THREADS", str(max(8, os.cpu_count() or 1)))
# workqueue is always available and supports thread masking; the default
# probe order would warn about mismatched TBB builds.
os.environ.setdefault("NUMBA_THREADING_LAYER", "workqueue")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised only without numba installed
    numba = None
    HAS_NUMBA = False

_VALID = ("numba", "numpy")


def _initial() -> str:
    env = os.environ.get("SPLATSEG_BACKEND", "").strip().lower()
    if env:
        if env not in _VALID:
            raise ValueError(f"SPLATSEG_BACKEND must be one of {_VALID}, got {env!r}")
        if env == "numba" and not HAS_NUMBA:
            raise RuntimeError("SPLATSEG_BACKEND=numba but numba is not installed")
        return env
    return "numba" if HAS_NUMBA else "numpy"


_active = _initial()
_threads = 1
_modules: dict[str, object] = {}


def active_backend() -> str:
    return _active


def set_backend(name: str) -> None:
    global _active
    if name not in _VALID:
        raise ValueError(f"backend must be one of {_VALID}, got {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise RuntimeError("numba backend requested but numba is not installed")
    _active = name


@contextmanager
def use_backend(name: str):
    """Temporarily switch backends (used by tests and benchmarks)."""
    prev = _active
    set_backend(name)
    try:
        yield
    finally:
        set_backend(prev)


def kernels():
    """Return the kernel module for the active backend."""
    mod = _modules.get(_active)
    if mod is None:
        if _active == "numba":
            from splatseg import _kernels_numba as mod
        else:
            from splatseg import _kernels_numpy as mod
        _modules[_active] = mod
    return mod


def set_thread_count(n: int) -> int:
    """Set the worker thread count for jitted kernels.

    Requests are clamped to numba's pool size. The numpy backend is
    single-threaded; the call still records the count for reporting.
    Kernel outputs are bit-identical for any thread count by construction
    (each output element is owned by exactly one worker).
    """
    global _threads
    n = max(1, int(n))
    if HAS_NUMBA:
        n = min(n, numba.config.NUMBA_NUM_THREADS)
        numba.set_num_threads(n)
    _threads = n
    return n


def thread_count() -> int:
    return _threads
