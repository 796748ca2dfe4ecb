"""GRU recurrence kernels.

The compiled Cython kernel is used when it was built; otherwise the numpy
implementation is used. Set ``ADMTL_PURE_PYTHON=1`` to force the fallback.

With both available the default backend is ``auto``: the compiled loop for
small problems, numpy (one BLAS matmul per step over the whole batch) once
batch * hidden**2 passes ``AUTO_CROSSOVER``. See benchmarks/bench_gru.py.
"""
import os

from . import _gru_py

try:
    if os.environ.get("ADMTL_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure-python backend requested")
    from . import _gru_cy as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _gru_py}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

BACKEND = "auto" if _compiled is not None else "python"
AUTO_CROSSOVER = 32768


def get_backend(name=None, batch=None, hidden=None):
    """Return the kernel module ``name`` (default: the active backend).

    ``auto`` needs the problem size to choose.
    """
    name = name or BACKEND
    if name == "auto":
        if _compiled is None:
            return _gru_py
        small = batch is None or hidden is None or batch * hidden * hidden <= AUTO_CROSSOVER
        return _compiled if small else _gru_py
    try:
        return BACKENDS[name]
    except KeyError:
        raise ValueError(f"unknown or unavailable GRU backend {name!r}; have {sorted(BACKENDS)}") from None


def set_backend(name):
    """Switch the active backend for subsequent encoder calls."""
    global BACKEND
    if name != "auto":
        get_backend(name)
    BACKEND = name
