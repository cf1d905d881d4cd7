"""Proximal calculus of the logarithm.

``Psi(r) = log r`` on ``r > 0`` is a maximal monotone graph with potential
``j(r) = r log r - r`` (``j(0) = 0``, ``+inf`` for ``r < 0``). For ``lam > 0``:

* ``J_lam(r)``: the resolvent, the unique positive root of ``x + lam log x = r``;
* ``Psi_lam(r) = (r - J_lam(r)) / lam``: the Yosida approximation;
* ``Psi~_lam(r) = Psi_lam(r) - Psi_lam(0) + lam r``: the rectified nonlinearity;
* ``j_lam``: the Moreau envelope, whose derivative is ``Psi_lam``.

All functions take scalars or arrays and return the same kind. Resolvents are
computed by :mod:`stochlog.kernels` in log coordinates, so ``J_lam(r)`` stays
accurate (and positive until it underflows) for ``r << 0``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .errors import DomainError, NonConvergence, ParamError
from .grid import ScalarField


@dataclass(frozen=True)
class YosidaParams:
    """Regularization level and root-finder settings.

    ``psi0`` caches ``Psi_lam(0)``; it enters every rectified evaluation.
    """

    lam: float
    newton_tol: float = 1e-12
    max_iter: int = 100
    psi0: float = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ParamError(f"lambda must lie in (0, 1], got {self.lam}")
        if not self.newton_tol > 0:
            raise ParamError("newton_tol must be positive")
        if self.max_iter < 1:
            raise ParamError("max_iter must be at least 1")
        y = np.full(1, np.nan)
        _solve(np.zeros(1), self, y)
        object.__setattr__(self, "psi0", float(y[0]))


def _solve(r, p, y):
    first, worst, _ = kernels.resolve_log(r, p.lam, p.newton_tol, p.max_iter, y)
    if first >= 0:
        raise NonConvergence(
            f"resolvent did not converge for r={r.reshape(-1)[first]!r} (lambda={p.lam})",
            residual=worst, index=first)
    return worst


def _as_array(r):
    a = np.asarray(r, dtype=float)
    if not np.all(np.isfinite(a)):
        raise DomainError("resolvent arguments must be finite")
    return a


def _wrap(a, like):
    return float(a.reshape(())) if np.ndim(like) == 0 else a


def log_resolvent(r, p):
    """``log J_lam(r)``; finite even where ``J_lam(r)`` underflows."""
    a = _as_array(r)
    y = np.full(a.size, np.nan)
    try:
        _solve(a.reshape(-1), p, y)
    except NonConvergence as exc:
        if a.ndim:
            exc.index = np.unravel_index(exc.index, a.shape)
        raise
    return _wrap(y.reshape(a.shape), r)


def resolvent(r, p):
    """``J_lam(r) = (I + lam Psi)^{-1}(r)``."""
    return _wrap(np.exp(np.asarray(log_resolvent(r, p))), r)


def yosida(r, p):
    """``Psi_lam(r) = (r - J_lam(r)) / lam``.

    Evaluated as ``log J_lam(r)``, which is the same number by the resolvent
    equation but free of cancellation when ``lam`` is small.
    """
    return log_resolvent(r, p)


def rectified(r, p):
    """``Psi_lam(r) - Psi_lam(0) + lam r``; vanishes at 0, slope at least ``lam``."""
    a = _as_array(r)
    return _wrap(np.asarray(yosida(a, p)) - p.psi0 + p.lam * a, r)


def rectified_derivative(r, p):
    """``lam + 1 / (lam + J_lam(r))``."""
    a = _as_array(r)
    return _wrap(p.lam + 1.0 / (p.lam + np.asarray(resolvent(a, p))), r)


def potential(r):
    """``j(r) = r log r - r`` with ``j(0) = 0`` and ``j(r) = +inf`` for ``r < 0``."""
    a = np.asarray(r, dtype=float)
    out = np.full(a.shape, np.inf)
    pos = a > 0
    out[pos] = a[pos] * np.log(a[pos]) - a[pos]
    out[a == 0] = 0.0
    return _wrap(out, r)


def envelope_extended(r, p):
    """``j(J_lam(r)) + (r - J_lam(r))^2 / (2 lam)`` for every real ``r``.

    This is the Moreau envelope; it is finite on the whole line.
    """
    a = _as_array(r)
    y = np.asarray(log_resolvent(a, p))
    J = np.exp(y)
    return _wrap(J * (y - 1.0) + (a - J) ** 2 / (2.0 * p.lam), r)


def moreau_envelope(r, p):
    """Moreau envelope ``j_lam(r)`` for ``r >= 0``.

    Negative arguments raise :class:`DomainError`: they mean a negativity
    event upstream, which must be reported rather than enveloped.
    """
    a = _as_array(r)
    if np.any(a < 0):
        raise DomainError("moreau_envelope is evaluated on r >= 0 only")
    return envelope_extended(r, p)


def propaux_gap(r, p):
    """``Psi_lam(r) + r / (lam + J_lam(r)) - 2 r``, non-positive for ``lam <= 1/2``."""
    if p.lam > 0.5:
        raise ParamError(f"the gap bound is only established for lambda <= 1/2, got {p.lam}")
    a = _as_array(r)
    if np.any(a <= 0):
        raise DomainError("propaux_gap is defined for r > 0")
    y = np.asarray(log_resolvent(a, p))
    J = np.exp(y)
    return _wrap((a - J) / p.lam + a / (p.lam + J) - 2.0 * a, r)


POINTWISE = {
    resolvent, log_resolvent, yosida, rectified, rectified_derivative,
    moreau_envelope, envelope_extended, propaux_gap,
}


def apply_pointwise(f, fld, *args):
    """Apply a scalar operation to every sample of a :class:`ScalarField`.

    The operations of this module run vectorized; any other callable is
    applied entry by entry. Errors carry the offending grid index.
    """
    if f in POINTWISE:
        try:
            values = f(fld.values, *args)
        except NonConvergence as exc:
            raise NonConvergence(f"{exc} at grid index {exc.index}", exc.residual, exc.index) from exc
        return ScalarField(fld.grid, values)
    out = np.empty(fld.grid.shape)
    for idx, v in np.ndenumerate(fld.values):
        try:
            out[idx] = f(float(v), *args)
        except Exception as exc:
            raise type(exc)(f"{exc} at grid index {idx}") from exc
    return ScalarField(fld.grid, out)
