# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled pointwise resolvent kernels for the logarithm.

Every entry solves ``exp(y) + lam * y = r`` for ``y = log J_lam(r)`` with a
Newton iteration safeguarded by bisection on a bracket that always contains
the root. Array arguments must be C-contiguous float64.
"""

from libc.math cimport exp, log, fabs, isnan, fmax, fmin, INFINITY

cdef double EPS = 2.220446049250313e-16


cdef inline void _bracket(double r, double lam, double* lo, double* hi) noexcept nogil:
    cdef double h
    if r > 1.0:
        h = fmin(r / lam, log(r))
    elif r > 0.0:
        h = 0.0
    else:
        h = r / lam
    hi[0] = h
    lo[0] = (r - exp(h)) / lam
    if r > 0.0:
        lo[0] = fmax(lo[0], log((r + lam) / (1.0 + lam)))
        if lo[0] > h:
            lo[0] = h


cdef inline int _solve(double r, double lam, double tol, int max_iter,
                       double* y_io, double* res_out) noexcept nogil:
    """Return iterations used, or -1 on failure; y_io holds the guess (NaN = none).

    With a warm start the bracket is only computed once a Newton step is not
    small; g is convex and increasing so small steps from a nearby guess
    cannot leave the basin. A final Newton step is accepted without another
    evaluation when its Taylor bound already meets the tolerance.
    """
    cdef double lo = -INFINITY, hi = INFINITY, y, ey, g, yn, step, tol_eff
    cdef int it
    cdef bint bracketed = 0
    y = y_io[0]
    if isnan(y):
        _bracket(r, lam, &lo, &hi)
        bracketed = 1
        y = hi
    for it in range(max_iter):
        ey = exp(y)
        g = ey + lam * y - r
        tol_eff = fmax(tol, 4.0 * EPS * (fabs(r) + ey + lam * fabs(y)))
        if fabs(g) <= tol_eff:
            y_io[0] = y
            res_out[0] = fabs(g)
            return it + 1
        step = g / (ey + lam)
        if fabs(step) <= 1e-3 and 0.505 * ey * step * step <= tol_eff:
            # g is convex: the Newton update lands at residual e^xi step^2 / 2
            y_io[0] = y - step
            res_out[0] = 0.505 * ey * step * step
            return it + 1
        if not bracketed and fabs(step) > 0.5:
            _bracket(r, lam, &lo, &hi)
            bracketed = 1
            if y <= lo or y >= hi:
                y = hi
                continue
        if g > 0.0:
            hi = y
        else:
            lo = y
        if bracketed and hi - lo <= 4.0 * EPS * fmax(1.0, fabs(y)):
            y_io[0] = y
            res_out[0] = fabs(g)
            return it + 1
        yn = y - step
        if yn <= lo or yn >= hi:
            yn = 0.5 * (lo + hi)
        y = yn
    ey = exp(y)
    y_io[0] = y
    res_out[0] = fabs(ey + lam * y - r)
    return -1


def resolve_log(const double[::1] r, double lam, double tol, int max_iter,
                double[::1] y_io):
    """Overwrite ``y_io`` with ``log J_lam(r)``; NaN entries mean "no guess".

    Returns ``(first_failure, worst_residual, max_iterations)``; the first
    field is -1 when every entry converged.
    """
    cdef Py_ssize_t i, n = r.shape[0], fail = -1
    cdef double res, worst = 0.0
    cdef int its, max_its = 0
    with nogil:
        for i in range(n):
            its = _solve(r[i], lam, tol, max_iter, &y_io[i], &res)
            if its < 0:
                if fail < 0:
                    fail = i
                its = max_iter
            if res > worst:
                worst = res
            if its > max_its:
                max_its = its
    return fail, worst, max_its


def shifted_yosida(const double[::1] r, double lam, double psi0, double tol,
                   int max_iter, double[::1] y_io, double[::1] out):
    """Write ``Psi_lam(r) - psi0`` into ``out`` and ``log J_lam(r)`` into ``y_io``.

    ``Psi_lam(r) = log J_lam(r)`` exactly; using the log avoids the
    cancellation in ``(r - J) / lam`` for small ``lam``.
    """
    cdef Py_ssize_t i, n = r.shape[0], fail = -1
    cdef double res, worst = 0.0
    cdef int its, max_its = 0
    with nogil:
        for i in range(n):
            its = _solve(r[i], lam, tol, max_iter, &y_io[i], &res)
            if its < 0:
                if fail < 0:
                    fail = i
                its = max_iter
            if res > worst:
                worst = res
            if its > max_its:
                max_its = its
            out[i] = y_io[i] - psi0
    return fail, worst, max_its
