"""Estimates along sample paths and across ensembles.

Expectations are path averages reported with a ``3 sigma / sqrt(n)`` band.
Time integrals inside the energy balance are trapezoid sums over every time
step (finer than the output grid), taken from :class:`PathDiagnostics`.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, ParamError, ReplayError
from .grid import ScalarField, inner_l2, norm_hminus1_nu, norm_l2, pairing_hminus1_nu
from .monotone import envelope_extended, moreau_envelope
from .solver import rectified_field

MIN_PATHS = 30


def _band(v):
    v = np.asarray(v, dtype=float)
    if v.shape[0] < 2:
        return np.zeros(v.shape[1:])
    return 3.0 * v.std(axis=0, ddof=1) / np.sqrt(v.shape[0])


# ----------------------------------------------------------------------- energy

def phi_lambda(x, p, return_flag=False):
    """``Phi_lam(x) = int j_lam(x) + (lam / 2) x^2``.

    Negative samples are evaluated through the everywhere-defined envelope
    and flagged; ``return_flag=True`` returns ``(value, flagged)``. ``p`` is
    either :class:`YosidaParams` or :class:`RegularizationParams`.
    """
    p = getattr(p, "yosida", p)
    if p.lam > 0.5:
        raise ParamError("Phi_lambda diagnostics need lambda <= 1/2")
    v = x.values
    flagged = False
    try:
        dens = moreau_envelope(v, p)
    except DomainError:
        dens = envelope_extended(v, p)
        flagged = True
    val = float((dens + 0.5 * p.lam * v ** 2).sum() * x.grid.cell_volume)
    return (val, flagged) if return_flag else val


def energy_terms(ensemble, model, lam):
    """Per-path LHS and RHS of the energy inequality at the output times.

    ``LHS = Phi(X_t) + int_0^t ||grad Psi~(X)||^2`` and
    ``RHS = Phi(x) + sum mu_k ||e_k||_inf^2 (lam + 1) int_0^t ||X||^2``.
    For ``nu > 0`` the dissipation integral carries the extra ``nu`` terms of
    the shifted operator (see :class:`PathDiagnostics`).
    """
    coef = model.sigma_norm_bound * (lam + 1.0)
    lhs = np.array([d.phi_lambda + d.int_dissipation for d in ensemble])
    rhs = np.array([d.phi_lambda[0] + coef * d.int_l2 for d in ensemble])
    return lhs, rhs


def energy_balance_check(ensemble, model, lam, allowance=None):
    """Slack ``E[RHS] - E[LHS]`` per output time against its tolerance.

    The tolerance is the 3 sigma band of the per-path slack plus
    ``allowance`` (a discretization allowance, e.g. from
    :func:`dt_halving_allowance`). Violations are data: ``passed`` is False.
    """
    if lam > 0.5:
        raise ParamError("the energy inequality is established for lambda <= 1/2")
    lhs, rhs = energy_terms(ensemble, model, lam)
    slack = rhs - lhs
    mean = slack.mean(axis=0)
    band = _band(slack)
    allow = np.zeros_like(mean) if allowance is None else np.broadcast_to(allowance, mean.shape)
    tol = band + allow
    return {
        "t": ensemble[0].t.tolist(),
        "slack_mean": mean.tolist(),
        "band": band.tolist(),
        "allowance": np.asarray(allow).tolist(),
        # t = 0 is an equality, so the margin is taken over later times
        "min_margin": float((mean + tol)[1:].min() if mean.size > 1 else (mean + tol).min()),
        "passed": bool(np.all(mean >= -tol)),
        "n_paths": len(ensemble),
    }


def dt_halving_allowance(coarse, fine, model, lam):
    """Richardson estimate ``2 |E slack(dt) - E slack(dt/2)|`` of the O(dt) bias."""
    lc, rc = energy_terms(coarse, model, lam)
    lf, rf = energy_terms(fine, model, lam)
    return 2.0 * np.abs((rc - lc).mean(axis=0) - (rf - lf).mean(axis=0))


def dissipation_identity(path):
    """Noise-off defect ``Phi(x) - Phi(X_t) - int ||grad Psi~||^2`` per output time
    (with the ``nu`` terms of the dissipation when ``nu > 0``).

    Zero in continuous time; the scheme leaves a non-negative O(dt) defect.
    """
    return path.phi_lambda[0] - path.phi_lambda - path.int_dissipation


# ----------------------------------------------------------------------- moments

@dataclass
class MomentCell:
    label: tuple
    c_hm1: float
    c_l2: float
    c_homog: float
    band_hm1: float
    n_paths: int


def fit_moment_constant(ensemble, label=()):
    """``C`` with ``E sup_t ||X||^2 <= C ||x||^2`` in ``H^-1_nu`` (the run's own shift),
    ``L^2`` and the homogeneous norm of the mean-free part."""
    if len(ensemble) < MIN_PATHS:
        raise ParamError(f"moment constants need at least {MIN_PATHS} paths")
    hm1 = np.array([d.norm_hm1_own_sq.max() / d.norm_hm1_own_sq[0] for d in ensemble])
    l2 = np.array([d.norm_l2_sq.max() / d.norm_l2_sq[0] for d in ensemble])
    hom = np.array([d.norm_hm1_homog_sq.max() / d.norm_hm1_homog_sq[0] for d in ensemble])
    return MomentCell(label, float(hm1.mean()), float(l2.mean()), float(hom.mean()),
                      float(_band(hm1[:, None])[0]), len(ensemble))


def moment_bound_check(cells, factor=2.0):
    """Stability of the fitted constants across cells: max / min within ``factor``."""
    out = {"cells": [c.__dict__ for c in cells]}
    for key in ("c_hm1", "c_l2", "c_homog"):
        vals = np.array([getattr(c, key) for c in cells])
        ratio = float(vals.max() / vals.min())
        out[f"{key}_ratio"] = ratio
        out[f"{key}_stable"] = bool(ratio <= factor)
    out["passed"] = bool(out["c_hm1_stable"] and out["c_l2_stable"])
    return out


def deterministic_sup_ratio(path):
    """``sup_t ||X_t||_{H^-1_nu} / ||x||_{H^-1_nu}``; equals 1 for a dissipative run."""
    return float(np.sqrt(path.norm_hm1_own_sq.max() / path.norm_hm1_own_sq[0]))


# --------------------------------------------------------------- weak formulation

def weak_form_residual(path, cfg, model, j):
    """Replay the weak formulation for test mode ``e_j`` (1-based) at every step.

    ``|<X_t, e_j> - <x, e_j> - sum dt <Psi~(X_n), (Lap - nu) e_j>
    - sum <X_n dW_n + S X_n dt / 2, e_j>|``, with left-point sums.
    Needs ``path.states`` and ``path.gaussians`` (``store_states`` and
    ``store_increments``).
    """
    if path.states is None or path.gaussians is None:
        raise ReplayError("weak_form_residual needs stored states and Wiener increments")
    if not 1 <= j <= model.n_modes:
        raise ParamError(f"mode index must lie in 1..{model.n_modes}")
    g = cfg.grid
    p = cfg.params
    e = model.e_stack[j - 1].reshape(g.shape)
    le = g.irfft(-(p.nu + g.ksq_r) * g.rfft(e))
    h = g.cell_volume
    dt = cfg.dt
    S = model.strat_field.values
    sq = np.sqrt(model.mu * dt)
    x0 = path.states[0]
    acc = 0.0
    out = [0.0]
    for n in range(path.gaussians.shape[0]):
        X = path.states[n]
        R = rectified_field(X, p)
        dW = np.tensordot(path.gaussians[n] * sq, model.e_stack, axes=1).reshape(g.shape)
        acc += dt * float((R * le).sum()) * h + float((X * (dW + 0.5 * S * dt) * e).sum()) * h
        cur = float(((path.states[n + 1] - x0) * e).sum()) * h
        out.append(abs(cur - acc))
    return np.array(out)


# ----------------------------------------------------------------------- nu rate

def nu_rate_check(delta_nu, mean_sq_distance, min_alpha=0.8):
    """Fit ``distance^2 ~ C |nu - nu'|^alpha``; pass when ``alpha >= min_alpha``."""
    from .cascade import fit_power

    alpha, C = fit_power(delta_nu, mean_sq_distance)
    return {"alpha": alpha, "C": C, "passed": bool(np.isfinite(alpha) and alpha >= min_alpha),
            "delta_nu": list(map(float, delta_nu)),
            "mean_sq_distance": list(map(float, mean_sq_distance))}


# ------------------------------------------------------------- operator checks

def operator_apply(u, p):
    """``A(u) = (Lap - nu) Psi~_lam(u)`` (the drift generator)."""
    g = u.grid
    R = g.rfft(rectified_field(u.values, p))
    return ScalarField(g, g.irfft(-(p.nu + g.ksq_r) * R))


def operator_spot_checks(p, grid, rng, n_pairs=20, nu_pair=None):
    """Sampled monotonicity, coercivity, boundedness and hemicontinuity.

    Pairings are in ``H^-1_nu`` (shift ``nu_pair``, default the run's own).
    Reported constants are the smallest ``C >= 0`` consistent with the
    samples; ``c_lam = lam + 1/lam`` enters the boundedness bound.
    """
    from .grid import random_smooth_field

    nu = nu_pair if nu_pair is not None else p.norm_nu
    if p.nu != nu and p.nu > 0:
        raise ParamError("pairings must use the operator's own shift")
    c_lam = p.lam + 1.0 / p.lam
    mono, coer, bound, hemi = [], [], [], []
    for _ in range(n_pairs):
        u = random_smooth_field(grid, rng, corr_length=1.5, mean=rng.uniform(-0.5, 2.0),
                                amplitude=rng.uniform(0.1, 2.0))
        v = random_smooth_field(grid, rng, corr_length=1.0, mean=rng.uniform(-0.5, 2.0),
                                amplitude=rng.uniform(0.1, 2.0))
        x = random_smooth_field(grid, rng, corr_length=2.0)
        Au, Av = operator_apply(u, p), operator_apply(v, p)
        w = u - v
        hw = norm_hminus1_nu(w, nu) ** 2
        mono.append(max(0.0, pairing_hminus1_nu(Au - Av, w, nu) / hw))
        hu = norm_hminus1_nu(u, nu) ** 2
        coer.append(max(0.0, (pairing_hminus1_nu(Au, u, nu) + p.lam * norm_l2(u) ** 2) / hu))
        # ||A u||_{V*} = sup_v <A u, v>_{H^-1_nu} / ||v||_2 = ||Psi~(u)||_2 for nu > 0
        dual = norm_l2(ScalarField(grid, rectified_field(u.values, p)))
        bound.append(dual / norm_l2(u))
        thetas = np.linspace(0.0, 1.0, 11)
        vals = np.array([pairing_hminus1_nu(operator_apply(u + th * v, p), x, nu) for th in thetas])
        lip = np.abs(np.diff(vals)).max() / (thetas[1] - thetas[0])
        hemi.append(lip / (c_lam * norm_l2(v) * norm_l2(x)))
    return {
        "monotonicity_C": float(max(mono)),
        "coercivity_C": float(max(coer)),
        "boundedness_ratio": float(max(bound)),
        "boundedness_c_lambda": c_lam,
        "boundedness_ok": bool(max(bound) <= c_lam * (1 + 1e-12)),
        "hemicontinuity_lipschitz_ratio": float(max(hemi)),
        "hemicontinuity_ok": bool(max(hemi) <= 1.0 + 1e-9),
    }


def strat_sign_check(x, model):
    """``<(sigma x sigma)(x), x^->_2`` and ``-sum mu_k ||e_k x^-||_2^2``; both <= 0 and equal.

    ``x^- = max(-x, 0)`` is the (non-negative) negative part.
    """
    neg = ScalarField(x.grid, np.maximum(-x.values, 0.0))
    lhs = inner_l2(ScalarField(x.grid, model.strat_field.values * x.values), neg)
    rhs = -sum(m.mu * norm_l2(neg * m.e) ** 2 for m in model.modes)
    return lhs, rhs


# --------------------------------------------------------------------- ensembles

@dataclass
class EnsembleReport:
    """Per-time means and bands of every scalar diagnostic, plus a ledger."""

    n_paths: int
    t: np.ndarray
    mean: dict
    band: dict
    constants: dict = field(default_factory=dict)
    ledger: list = field(default_factory=list)

    def rows(self):
        out = []
        for i, t in enumerate(self.t):
            row = {"t": float(t)}
            for k in self.mean:
                row[f"mean_{k}"] = float(self.mean[k][i])
                row[f"band_{k}"] = float(self.band[k][i])
            out.append(row)
        return out

    def record(self, name, passed, detail=""):
        self.ledger.append({"criterion": name, "passed": bool(passed), "detail": detail})


SCALARS = ("norm_l2_sq", "norm_hm1_own_sq", "norm_hm1_homog_sq", "phi_lambda",
           "grad_psi_l2_sq", "int_grad_psi", "int_dissipation", "int_l2", "min_value",
           "negativity_fraction", "mass", "leakage")


def aggregate(ensemble):
    n = len(ensemble)
    mean, band = {}, {}
    for k in SCALARS:
        v = np.array([getattr(d, k) for d in ensemble])
        mean[k] = v.mean(axis=0)
        band[k] = _band(v)
    rep = EnsembleReport(n, ensemble[0].t.copy(), mean, band)
    rep.constants["max_negativity_fraction"] = float(max(d.negativity_fraction.max() for d in ensemble))
    rep.constants["negativity_events"] = int(sum(len(d.negativity_events) for d in ensemble))
    rep.constants["max_leakage"] = float(max(d.leakage.max() for d in ensemble))
    return rep


def positivity_report(ensemble):
    """Negativity at output times and over every step."""
    frac = max(float(d.negativity_fraction.max()) for d in ensemble)
    events = [(d.path_id,) + tuple(ev) for d in ensemble for ev in d.negativity_events]
    return {
        "max_fraction_at_outputs": frac,
        "n_events": len(events),
        "worst_undershoot": min((ev[4] for ev in events), default=0.0),
        "events": events[:100],
        "run_min_value": min(d.run_min_value for d in ensemble),
        "passed": frac == 0.0 and not events,
    }
