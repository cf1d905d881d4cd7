"""Property suite for the scalar calculus, run by ``stochlog check-scalar``.

Each check returns a ledger entry ``{"check", "passed", "value", "limit",
"detail"}``; ``value`` is the worst observed quantity and ``limit`` the
threshold it is compared with.
"""

from __future__ import annotations

import numpy as np

from . import monotone as m
from .errors import NonConvergence

SWEEP_LAMBDAS = (0.5, 0.25, 0.1, 0.01)
GAP_TOL = 1e-9
LOG_TOL = 0.01
N_SWEEP = 200
N_PAIRS = 10_000
# floating slack for inequalities that hold with equality in exact arithmetic
ROUND = 8 * np.finfo(float).eps


def _entry(check, passed, value, limit, detail=""):
    return {"check": check, "passed": bool(passed), "value": float(value),
            "limit": float(limit), "detail": detail}


def propaux_sweep(lams=SWEEP_LAMBDAS, n=N_SWEEP, tol=GAP_TOL):
    """Max of the gap over a log sweep of ``r`` in ``[1e-6, 1e3]``."""
    r = np.logspace(-6, 3, n)
    out = []
    for lam in lams:
        worst = float(np.max(m.propaux_gap(r, m.YosidaParams(lam))))
        out.append(_entry(f"propaux_gap[lambda={lam}]", worst <= tol, worst, tol))
    return out


def bracketing(lams=SWEEP_LAMBDAS, n=N_SWEEP):
    """``(r + lam)/(1 + lam) <= J_lam(r) <= e^r`` for ``r > 0``."""
    r = np.logspace(-6, 3, n)
    out = []
    for lam in lams:
        p = m.YosidaParams(lam)
        y = m.log_resolvent(r, p)
        J = np.exp(y)
        lo = (r + lam) / (1 + lam)
        # compare the upper bound in log form: e^1000 overflows
        viol = max(float(np.max((lo - J) / lo)), float(np.max(y - r)))
        out.append(_entry(f"bracketing[lambda={lam}]", viol <= ROUND, viol, ROUND))
    return out


def log_limit(lam=1e-4, tol=LOG_TOL, n=N_SWEEP):
    r = np.logspace(-1, 1, n)
    err = float(np.max(np.abs(m.yosida(r, m.YosidaParams(lam)) - np.log(r))))
    return [_entry(f"log_limit[lambda={lam}]", err <= tol, err, tol)]


def random_pairs(rng, n):
    """Pairs spread over negative, small and large arguments."""
    a = np.concatenate([rng.uniform(-5, 5, n // 2), np.exp(rng.uniform(-12, 6, n - n // 2))])
    b = a + rng.standard_normal(n) * np.exp(rng.uniform(-8, 2, n))
    return a, b


def lipschitz(lams=SWEEP_LAMBDAS, n=N_PAIRS, seed=0):
    """Nonexpansiveness of ``J``, ``1/lam``-Lipschitz and monotone ``Psi_lam``,
    strong monotonicity of the rectified map."""
    rng = np.random.default_rng(seed)
    out = []
    for lam in lams:
        p = m.YosidaParams(lam)
        a, b = random_pairs(rng, n)
        d = np.abs(a - b)
        keep = d > 0
        a, b, d = a[keep], b[keep], d[keep]
        Ja, Jb = m.resolvent(a, p), m.resolvent(b, p)
        Pa, Pb = m.yosida(a, p), m.yosida(b, p)
        Ra, Rb = m.rectified(a, p), m.rectified(b, p)
        # each ratio is compared with its bound up to rounding of the differences
        slack = ROUND * (1 + np.abs(a) + np.abs(b)) / d
        nonexp = float(np.max(np.abs(Ja - Jb) / d - 1 - slack))
        lip = float(np.max(lam * np.abs(Pa - Pb) / d - 1 - slack))
        mono = float(np.max(-(Pa - Pb) * (a - b) / d ** 2 - slack / lam))
        strong = float(np.max(lam - (Ra - Rb) * (a - b) / d ** 2 - slack / lam))
        out += [
            _entry(f"nonexpansive[lambda={lam}]", nonexp <= 0, nonexp, 0.0, f"{a.size} pairs"),
            _entry(f"yosida_lipschitz[lambda={lam}]", lip <= 0, lip, 0.0, f"{a.size} pairs"),
            _entry(f"yosida_monotone[lambda={lam}]", mono <= 0, mono, 0.0, f"{a.size} pairs"),
            _entry(f"rectified_strong[lambda={lam}]", strong <= 0, strong, 0.0, f"{a.size} pairs"),
        ]
    return out


def envelope_gradient(lams=SWEEP_LAMBDAS, h=1e-5, tol=1e-6):
    """Central differences of the envelope against ``Psi_lam``."""
    r = np.linspace(-3, 10, 101)
    out = []
    for lam in lams:
        p = m.YosidaParams(lam)
        fd = (m.envelope_extended(r + h, p) - m.envelope_extended(r - h, p)) / (2 * h)
        err = float(np.max(np.abs(fd - m.yosida(r, p)) / (1 + np.abs(m.yosida(r, p)))))
        out.append(_entry(f"envelope_gradient[lambda={lam}]", err <= tol, err, tol))
    return out


def resolvent_residual(lams=SWEEP_LAMBDAS, tol=1e-10):
    """``x + lam log x = r`` at the returned root over a wide range."""
    r = np.concatenate([-np.logspace(3, -6, 100), [0.0], np.logspace(-6, 3, 100)])
    out = []
    for lam in lams:
        p = m.YosidaParams(lam)
        try:
            y = m.log_resolvent(r, p)
        except NonConvergence as exc:
            out.append(_entry(f"resolvent_residual[lambda={lam}]", False, np.inf, tol, str(exc)))
            continue
        res = float(np.max(np.abs(np.exp(y) + lam * y - r) / (1 + np.abs(r))))
        out.append(_entry(f"resolvent_residual[lambda={lam}]", res <= tol, res, tol))
    return out


def scalar_suite(lams=SWEEP_LAMBDAS, seed=0, n_pairs=N_PAIRS):
    """Every scalar check; returns the ledger."""
    ledger = []
    ledger += propaux_sweep(lams)
    ledger += bracketing(lams)
    ledger += log_limit()
    ledger += lipschitz(lams, n_pairs, seed)
    ledger += envelope_gradient(lams)
    ledger += resolvent_residual(lams)
    return ledger
