"""Coupled runs across the regularization cascade.

Limits are taken in the order epsilon, then nu, then lambda. Every member of
a study uses the same seed and path ids; members whose steps differ draw the
noise on the finest step and sum it (``brownian_refinement``), so all of them
see the same Brownian path (synchronous coupling).

Distances between members are measured at the common output times in
``H^-1_{nu_ref}`` with ``nu_ref`` the smallest positive shift involved, and
in ``L^2`` integrated in time by the trapezoid rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid

from .errors import ConfigError
from .solver import simulate_batch


def _is_decreasing(seq):
    return all(b < a for a, b in zip(seq, seq[1:]))


def coupled_configs(base, param_list, common_dt=False):
    """One SimConfig per parameter set, all on a shared dyadic Brownian grid.

    Each member keeps the base step when admissible and otherwise its own
    automatic step; ``common_dt`` puts every member on the finest one.
    """
    raw = []
    for p in param_list:
        trial = replace(base, params=p, dt=None, brownian_refinement=0)
        dt = base.dt if base.dt <= trial.dt_bound else trial.dt
        raw.append((p, dt))
    dt_f = min(dt for _, dt in raw)
    if common_dt:
        raw = [(p, dt_f) for p, _ in raw]
    out = []
    for p, dt in raw:
        r = math.log2(dt / dt_f)
        if abs(r - round(r)) > 1e-9:
            raise ConfigError(f"steps {dt} and {dt_f} are not dyadically related")
        out.append(replace(base, params=p, dt=dt, brownian_refinement=int(round(r)),
                           store_outputs=True))
    return out


def _hm1_sq(grid, F, nu):
    axes = tuple(range(-grid.dim, 0))
    w = grid.rfft_weight * grid.volume / (nu + grid.ksq_r)
    return (np.abs(F) ** 2 * w).sum(axis=axes)


def _pair_metrics(grid, A, B, nu_ref, window, times):
    """Per-path sup-in-time squared distances and time-integrated L2 distance.

    ``A``, ``B``: output states of shape ``(n_out, P, *grid.shape)``.
    """
    D = A - B
    F = grid.rfft(D)
    hm1 = _hm1_sq(grid, F, nu_ref)
    l2 = (D ** 2).reshape(D.shape[0], D.shape[1], -1).sum(axis=2) * grid.cell_volume
    loc = _hm1_sq(grid, grid.rfft(D * window), nu_ref)
    l2_int = trapezoid(np.sqrt(l2), times, axis=0) if times.size > 1 else np.zeros(D.shape[1])
    return {
        "sup_hm1_sq": hm1.max(axis=0),
        "int_l2": l2_int,
        "sup_local_hm1_sq": loc.max(axis=0),
    }


def interior_window(grid):
    """Indicator of the central half box ``[-L/2, L/2)^d``."""
    xs = grid.mesh()
    inside = np.ones(grid.shape, dtype=bool)
    for x in xs:
        inside &= np.abs(x) < 0.5 * grid.half_length
    return inside.astype(float)


@dataclass
class StudyResult:
    """Distances of one schedule; arrays are per path."""

    name: str
    values: list
    comparisons: list = field(default_factory=list)
    solver: dict = field(default_factory=dict)

    def summary(self):
        rows = []
        for c in self.comparisons:
            row = {"study": self.name, "a": c["a"], "b": c["b"], "kind": c["kind"]}
            for key in ("sup_hm1_sq", "int_l2", "sup_local_hm1_sq"):
                v = np.asarray(c[key])
                row[f"mean_{key}"] = float(v.mean())
                row[f"band_{key}"] = float(3.0 * v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0
            rows.append(row)
        return rows


def run_coupled(base, param_list, pairs, path_ids, batch_size=10, nu_ref=None, model=None,
                common_dt=False):
    """Run every member on the same paths and collect pairwise metrics.

    ``pairs`` is a list of ``(i, j, kind)`` index pairs into ``param_list``.
    Paths are processed chunk by chunk so only one chunk of output states is
    held in memory.
    """
    cfgs = coupled_configs(base, param_list, common_dt)
    times = cfgs[0].output_times
    for c in cfgs[1:]:
        if c.output_times.size != times.size or not np.allclose(c.output_times, times):
            raise ConfigError("members do not share output times")
    if nu_ref is None:
        positive = [p.nu for p in param_list if p.nu > 0]
        nu_ref = min(positive) if positive else 1.0
    window = interior_window(base.grid)
    acc = {k: {"sup_hm1_sq": [], "int_l2": [], "sup_local_hm1_sq": []} for k in range(len(pairs))}
    solver = {}
    ids = list(path_ids)
    for start in range(0, len(ids), batch_size):
        chunk = ids[start:start + batch_size]
        states = []
        for i, cfg in enumerate(cfgs):
            diags = simulate_batch(cfg, chunk, model)
            states.append(np.stack([d.output_states for d in diags], axis=1))
            if cfg.params.epsilon > 0:
                s = diags[0].solver
                prev = solver.get(i, {"max_relative_residual": 0.0, "solves": 0})
                solver[i] = {"max_relative_residual": max(prev["max_relative_residual"],
                                                          s["max_relative_residual"]),
                             "solves": prev["solves"] + s["solves"]}
        for k, (a, b, _) in enumerate(pairs):
            m = _pair_metrics(base.grid, states[a], states[b], nu_ref, window, times)
            for key, v in m.items():
                acc[k][key].extend(v.tolist())
    out = []
    for k, (a, b, kind) in enumerate(pairs):
        out.append({"a": a, "b": b, "kind": kind, "nu_ref": nu_ref,
                    **{key: np.array(v) for key, v in acc[k].items()}})
    return out, solver, cfgs


def fit_power(x, y):
    """Least-squares slope and prefactor of ``log y`` against ``log x``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = (x > 0) & (y > 0)
    if keep.sum() < 2:
        return float("nan"), float("nan")
    alpha, logc = np.polyfit(np.log(x[keep]), np.log(y[keep]), 1)
    return float(alpha), float(np.exp(logc))


def cascade_study(cfg, eps_schedule=(), nu_schedule=(), lam_schedule=(), n_paths=None,
                  batch_size=10, model=None):
    """Epsilon, then nu, then lambda studies with synchronous coupling.

    Returns a dict with one :class:`StudyResult` per non-empty schedule plus
    the fitted nu-rate. Schedules must be strictly decreasing; a single entry
    yields an empty study (nothing is simulated).
    """
    for name, sched in (("epsilon", eps_schedule), ("nu", nu_schedule), ("lambda", lam_schedule)):
        if not _is_decreasing(list(sched)):
            raise ConfigError(f"{name} schedule must be strictly decreasing, got {list(sched)}")
    ids = list(range(n_paths if n_paths is not None else cfg.n_paths))
    base_p = cfg.params
    report = {"order": ["epsilon", "nu", "lambda"], "n_paths": len(ids)}

    for name, sched in (("epsilon", eps_schedule), ("nu", nu_schedule), ("lambda", lam_schedule)):
        if len(sched) == 1:
            report[name] = StudyResult(name, list(sched))

    if len(eps_schedule) > 1:
        plist = [replace(base_p, epsilon=0.0)] + [replace(base_p, epsilon=e) for e in eps_schedule]
        pairs = [(i + 1, 0, "to_direct") for i in range(len(eps_schedule))]
        pairs += [(i, i + 1, "consecutive") for i in range(1, len(eps_schedule))]
        # the direct reference shares the finest step so that its own time
        # discretization error does not mask the epsilon dependence
        comps, solver, _ = run_coupled(cfg, plist, pairs, ids, batch_size, model=model,
                                       common_dt=True)
        res = StudyResult("epsilon", list(eps_schedule), _label(comps, [0.0] + list(eps_schedule)), solver)
        to_direct = [float(np.mean(c["sup_hm1_sq"])) for c in comps if c["kind"] == "to_direct"]
        report["epsilon"] = res
        report["epsilon_to_direct"] = to_direct
        report["epsilon_monotone"] = _is_decreasing(to_direct) if len(to_direct) > 1 else True
        report["epsilon_max_residual"] = max((s["max_relative_residual"] for s in solver.values()),
                                             default=0.0)

    if len(nu_schedule) > 1:
        plist = [replace(base_p, epsilon=0.0, nu=v) for v in nu_schedule]
        pairs = [(i, i + 1, "consecutive") for i in range(len(nu_schedule) - 1)]
        comps, _, _ = run_coupled(cfg, plist, pairs, ids, batch_size, model=model)
        res = StudyResult("nu", list(nu_schedule), _label(comps, list(nu_schedule)))
        report["nu"] = res
        if comps:
            dnu = [abs(c["a"] - c["b"]) for c in comps]
            d2 = [float(np.mean(c["sup_hm1_sq"])) for c in comps]
            alpha, C = fit_power(dnu, d2)
            report["nu_rate"] = {"delta_nu": dnu, "mean_sup_hm1_sq": d2, "alpha": alpha, "C": C}

    if len(lam_schedule) > 1:
        plist = [replace(base_p, epsilon=0.0, lam=v) for v in lam_schedule]
        pairs = [(i, i + 1, "consecutive") for i in range(len(lam_schedule) - 1)]
        comps, _, _ = run_coupled(cfg, plist, pairs, ids, batch_size, model=model)
        res = StudyResult("lambda", list(lam_schedule), _label(comps, list(lam_schedule)))
        report["lambda"] = res
        report["lambda_local"] = [float(np.mean(c["sup_local_hm1_sq"])) for c in comps]
    return report


def _label(comps, values):
    for c in comps:
        c["a"] = values[c["a"]]
        c["b"] = values[c["b"]]
    return comps
