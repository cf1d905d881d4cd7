"""Backend selection for the pointwise resolvent kernels.

The compiled extension is used when it imports; otherwise the numpy twin.
Set ``STOCHLOG_PURE_PYTHON=1`` to force the fallback (the benchmark and the
backend-agreement tests do this through :func:`get_backend`).
"""

import os

import numpy as np

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

_FORCE_PURE = os.environ.get("STOCHLOG_PURE_PYTHON", "") not in ("", "0")

if _compiled is not None and not _FORCE_PURE:
    _active = _compiled
    BACKEND = "cython"
else:
    _active = _kernels_py
    BACKEND = "python"


def get_backend(name):
    """Return the kernel module called ``name`` ("cython" or "python")."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        if _compiled is None:
            raise ImportError("compiled kernels are not built")
        return _compiled
    raise ValueError(f"unknown backend {name!r}")


def compiled_available():
    return _compiled is not None


def resolve_log(r, lam, tol, max_iter, y_io, backend=None):
    """Fill ``y_io`` (flat, float64) with ``log J_lam(r)``.

    ``y_io`` entries that are NaN carry no warm start. Returns
    ``(first_failure, worst_residual, max_iterations)``.
    """
    mod = _active if backend is None else get_backend(backend)
    r = np.ascontiguousarray(r, dtype=np.float64).reshape(-1)
    return mod.resolve_log(r, float(lam), float(tol), int(max_iter), y_io)


def shifted_yosida(r, lam, psi0, tol, max_iter, y_io, out, backend=None):
    """Write ``Psi_lam(r) - psi0`` into ``out``; all arrays flat float64."""
    mod = _active if backend is None else get_backend(backend)
    r = np.ascontiguousarray(r, dtype=np.float64).reshape(-1)
    return mod.shifted_yosida(r, float(lam), float(psi0), float(tol), int(max_iter), y_io, out)
