"""Pure-numpy twin of :mod:`stochlog._kernels`.

Same bracket, same safeguarded Newton iteration and same stopping rules
(the bracket is always computed up front here, and a last Newton step is
accepted on its Taylor bound), vectorized over the active
entries. Results agree with the compiled kernel to rounding.
"""

import numpy as np

EPS = np.finfo(float).eps


def _bracket(r, lam):
    hi = np.where(r > 1.0, np.minimum(r / lam, np.log(np.where(r > 1.0, r, 1.0))),
                  np.where(r > 0.0, 0.0, r / lam))
    lo = (r - np.exp(hi)) / lam
    pos = r > 0.0
    lo_pos = np.log(np.where(pos, (r + lam) / (1.0 + lam), 1.0))
    lo = np.where(pos, np.minimum(np.maximum(lo, lo_pos), hi), lo)
    return lo, hi


def _solve(r, lam, tol, max_iter, y_io):
    lo, hi = _bracket(r, lam)
    y = y_io.copy()
    bad_guess = np.isnan(y) | (y <= lo) | (y >= hi)
    y[bad_guess] = hi[bad_guess]
    res = np.full(r.shape, np.inf)
    its = np.zeros(r.shape, dtype=np.int64)
    active = np.arange(r.size)
    for it in range(max_iter):
        if active.size == 0:
            break
        ya, ra = y[active], r[active]
        ey = np.exp(ya)
        g = ey + lam * ya - ra
        tol_eff = np.maximum(tol, 4.0 * EPS * (np.abs(ra) + ey + lam * np.abs(ya)))
        res[active] = np.abs(g)
        its[active] = it + 1
        pos = g > 0.0
        la, ha = lo[active], hi[active]
        ha = np.where(pos, ya, ha)
        la = np.where(pos, la, ya)
        step = g / (ey + lam)
        bound = 0.505 * ey * step * step
        taylor = (np.abs(g) > tol_eff) & (np.abs(step) <= 1e-3) & (bound <= tol_eff)
        res[active] = np.where(taylor, bound, res[active])
        done = (np.abs(g) <= tol_eff) | taylor \
            | (ha - la <= 4.0 * EPS * np.maximum(1.0, np.abs(ya)))
        # entries accepted on the residual keep their old bracket; it is unused
        lo[active], hi[active] = la, ha
        yn = ya - step
        y[active[taylor]] = yn[taylor]
        outside = (yn <= la) | (yn >= ha)
        yn = np.where(outside, 0.5 * (la + ha), yn)
        keep = ~done
        y[active[keep]] = yn[keep]
        active = active[keep]
    failed = active
    if failed.size:
        yf = y[failed]
        res[failed] = np.abs(np.exp(yf) + lam * yf - r[failed])
        its[failed] = max_iter
    y_io[...] = y
    first = int(failed[0]) if failed.size else -1
    worst = float(res.max()) if res.size else 0.0
    max_its = int(its.max()) if its.size else 0
    return first, worst, max_its


def resolve_log(r, lam, tol, max_iter, y_io):
    return _solve(np.asarray(r, dtype=float), float(lam), float(tol), int(max_iter), y_io)


def shifted_yosida(r, lam, psi0, tol, max_iter, y_io, out):
    r = np.asarray(r, dtype=float)
    status = _solve(r, float(lam), float(tol), int(max_iter), y_io)
    # Psi_lam(r) = log J_lam(r); no cancellation for small lam
    np.subtract(y_io, psi0, out=out)
    return status
