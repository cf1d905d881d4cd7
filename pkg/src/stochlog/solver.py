"""Time stepping for the regularized equations.

Three equations share one engine:

* ``nu = 0, epsilon = 0``: ``dX = Lap Psi~_lam(X) dt + X o dW``;
* ``nu > 0, epsilon = 0``: ``dX = (Lap - nu) Psi~_lam(X) dt + X o dW``;
* ``epsilon > 0``: the drift is replaced by its Yosida approximation
  ``-(X - JJ_eps X) / eps`` where ``u = JJ_eps x`` solves
  ``u + eps (nu - Lap) Psi~_lam(u) = x``.

Noise enters in Ito form, ``X dW + 1/2 S X dt`` with ``S = sum mu_k e_k^2``.

Direct mode is IMEX: writing ``Psi~_lam(X) = P(X) + lam X`` with
``P = Psi_lam - Psi_lam(0)``, the stiff ``lam (Lap - nu) X`` is implicit and
``P`` explicit, so in Fourier space (``q = nu + |k|^2``)::

    X^{n+1} = (X^n + F[X^n (dW + S dt / 2)] - dt q F[P(X^n)]) / (1 + dt lam q)

``P`` is ``1/lam``-Lipschitz, so the step is stable for
``dt < 2 lam / (nu + |k|^2_max)``; configurations must respect
``dt <= c_stab lam / (nu + |k|^2_max)``.

The engine advances a batch of paths (leading array axis) in lockstep. Each
path's numbers depend only on its own noise stream, so results do not depend
on how paths are grouped.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from . import kernels
from .errors import ConfigError, NonConvergence, ParamError, StabilityError
from .grid import Grid, ScalarField
from .monotone import YosidaParams
from .noise import NoiseSpec, brownian_gaussians, build_noise_model

C_STAB = 0.25


@dataclass(frozen=True)
class RegularizationParams:
    """The regularization triple and the solver tolerances.

    ``epsilon = 0`` means no outer Yosida approximation (direct mode).
    """

    lam: float = 0.25
    nu: float = 0.0
    epsilon: float = 0.0
    solver_tol: float = 1e-10
    solver_max_iter: int = 200
    newton_tol: float = 1e-12
    newton_max_iter: int = 100
    energy_diagnostics: bool = True

    def __post_init__(self):
        if not 0.0 < self.lam <= 1.0:
            raise ParamError(f"lambda must lie in (0, 1], got {self.lam}")
        if self.energy_diagnostics and self.lam > 0.5:
            raise ParamError(
                f"lambda={self.lam} > 1/2 is not allowed with energy diagnostics on")
        if not 0.0 <= self.nu <= 1.0:
            raise ParamError(f"nu must lie in [0, 1], got {self.nu}")
        if self.epsilon < 0:
            raise ParamError(f"epsilon must be non-negative, got {self.epsilon}")
        if not self.solver_tol > 0 or self.solver_max_iter < 1:
            raise ParamError("solver_tol must be positive and solver_max_iter >= 1")

    @property
    def mode(self):
        return "yosida" if self.epsilon > 0 else "direct"

    @cached_property
    def yosida(self):
        return YosidaParams(self.lam, self.newton_tol, self.newton_max_iter)

    @property
    def norm_nu(self):
        """Shift used to measure residuals and distances (1 when ``nu = 0``)."""
        return self.nu if self.nu > 0 else 1.0


@dataclass(frozen=True)
class DatumSpec:
    """Strictly positive smooth initial data ``floor + profile``.

    Profiles: ``constant``; ``bump`` (Gaussian of the given width at
    ``center``); ``mode`` (``amplitude * cos(pi * wavenumber * xi_1 / L)``).
    """

    profile: str = "bump"
    floor: float = 0.5
    amplitude: float = 1.0
    width: float = 1.5
    center: tuple = ()
    wavenumber: int = 1

    def __post_init__(self):
        if self.profile not in ("constant", "bump", "mode"):
            raise ParamError(f"unknown datum profile {self.profile!r}")
        if not self.floor > 0:
            raise ParamError("the datum floor must be positive")
        if self.width <= 0:
            raise ParamError("width must be positive")
        if self.profile == "mode" and abs(self.amplitude) >= self.floor:
            raise ParamError("mode datum needs |amplitude| < floor to stay positive")
        if self.profile == "bump" and self.amplitude < 0:
            raise ParamError("bump amplitude must be non-negative")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    def build(self, grid):
        xs = grid.mesh()
        if self.profile == "constant":
            return grid.constant(self.floor)
        if self.profile == "mode":
            k = np.pi * self.wavenumber / grid.half_length
            return ScalarField(grid, self.floor + self.amplitude * np.cos(k * xs[0]))
        c = self.center or (0.0,) * grid.dim
        if len(c) != grid.dim:
            raise ParamError("datum center must have one entry per dimension")
        r2 = sum((x - ci) ** 2 for x, ci in zip(xs, c))
        return ScalarField(grid, self.floor + self.amplitude * np.exp(-0.5 * r2 / self.width ** 2))

    def scaled(self, factor):
        return replace(self, floor=self.floor * factor, amplitude=self.amplitude * factor)


def stability_bound(grid, params, c_stab=C_STAB):
    """Largest admissible ``dt``.

    Direct mode: ``c_stab * lam / (nu + |k|^2_max)``. Yosida mode: ``epsilon``,
    which keeps ``X + (dt/eps)(u - X)`` a convex combination.
    """
    if params.epsilon > 0:
        return params.epsilon
    return c_stab * params.lam / (params.nu + grid.kmax_sq)


def auto_dt(t_final, bound):
    """Largest ``t_final / 2^m`` not exceeding ``bound``."""
    if t_final <= 0:
        return bound
    m = max(0, math.ceil(math.log2(t_final / bound) - 1e-12))
    return t_final / 2 ** m


@dataclass(frozen=True)
class SimConfig:
    """Everything one simulation needs.

    ``dt=None`` picks :func:`auto_dt`. Output times are multiples of
    ``t_final / n_outputs``. ``brownian_refinement = r`` draws the noise on
    the ``dt / 2^r`` grid and sums it, so configurations with dyadically
    related steps share their Brownian path.
    """

    grid: Grid = field(default_factory=Grid)
    noise: NoiseSpec = field(default_factory=NoiseSpec)
    params: RegularizationParams = field(default_factory=RegularizationParams)
    datum: DatumSpec = field(default_factory=DatumSpec)
    t_final: float = 1.0
    dt: float | None = None
    n_outputs: int = 16
    n_paths: int = 1
    seed: int = 0
    c_stab: float = C_STAB
    enforce_stability: bool = True
    brownian_refinement: int = 0
    nu_grid: tuple = (1.0, 0.1, 0.01)
    n_weak_modes: int = 8
    store_increments: bool = False
    store_states: bool = False
    store_outputs: bool = False
    snapshot_final: bool = False

    def __post_init__(self):
        if self.t_final < 0:
            raise ConfigError("t_final must be non-negative")
        if self.n_outputs < 1:
            raise ConfigError("n_outputs must be at least 1")
        if self.n_paths < 1:
            raise ConfigError("n_paths must be at least 1")
        if not 0 <= self.seed < 2 ** 64:
            raise ConfigError("seed must lie in [0, 2^64)")
        if any(not v > 0 for v in self.nu_grid):
            raise ConfigError("nu_grid entries must be positive")
        bound = self.dt_bound
        dt = self.dt if self.dt is not None else auto_dt(self.t_final, bound)
        if not dt > 0:
            raise ConfigError("dt must be positive")
        if self.enforce_stability and dt > bound * (1 + 1e-12):
            raise StabilityError(
                f"dt={dt:.4g} exceeds the stability bound {bound:.4g} "
                f"({self.params.mode} mode, lambda={self.params.lam}, nu={self.params.nu}, "
                f"epsilon={self.params.epsilon})")
        object.__setattr__(self, "dt", float(dt))
        if self.t_final > 0:
            steps = self.t_final / dt
            per_out = steps / self.n_outputs
            if abs(steps - round(steps)) > 1e-9 * steps or abs(per_out - round(per_out)) > 1e-9 * per_out \
                    or round(per_out) < 1:
                raise ConfigError(
                    f"t_final/dt={steps:.6g} must be an integer multiple of n_outputs={self.n_outputs}")

    @property
    def dt_bound(self):
        return stability_bound(self.grid, self.params, self.c_stab)

    @property
    def n_steps(self):
        return 0 if self.t_final == 0 else int(round(self.t_final / self.dt))

    @property
    def output_stride(self):
        return max(1, self.n_steps // self.n_outputs) if self.n_steps else 1

    @property
    def output_times(self):
        if self.n_steps == 0:
            return np.zeros(1)
        return np.arange(0, self.n_steps + 1, self.output_stride) * self.dt

    def noise_model(self):
        return build_noise_model(self.noise, self.grid)


@dataclass
class SolverState:
    """Current field, time, step counter and noise cursor of one path.

    ``spectrum`` and ``log_j`` cache the real-transform coefficients of the
    field and ``log J_lam`` of it (warm start); both are optional.
    """

    time: float
    field: ScalarField
    step_index: int = 0
    seed: int = 0
    path_id: int = 0
    refinement: int = 0
    spectrum: np.ndarray | None = None
    log_j: np.ndarray | None = None
    yosida_guess: np.ndarray | None = None


# --------------------------------------------------------------------- operators

def _shifted_yosida(x, p, y):
    """``P(x) = Psi_lam(x) - Psi_lam(0)`` with warm start ``y`` (updated)."""
    yp = p.yosida
    out = np.empty(x.size)
    first, worst, _ = kernels.shifted_yosida(
        x.reshape(-1), yp.lam, yp.psi0, yp.newton_tol, yp.max_iter, y, out)
    if first >= 0:
        raise NonConvergence(f"resolvent failed at flat index {first}", worst, first)
    return out.reshape(x.shape)


def rectified_field(x, p, y=None):
    """``Psi~_lam`` applied to an array of any shape."""
    if y is None:
        y = np.full(x.size, np.nan)
    return _shifted_yosida(x, p, y) + p.lam * x


def drift_lambda_nu(x, p, model):
    """``(Lap - nu) Psi~_lam(x) + 1/2 S x``."""
    g = x.grid
    R = g.rfft(rectified_field(x.values, p))
    lap = g.irfft(-(p.nu + g.ksq_r) * R)
    return ScalarField(g, lap + 0.5 * model.strat_field.values * x.values)


@dataclass
class SolveStats:
    solves: int = 0
    max_residual: float = 0.0
    max_iterations: int = 0
    fallbacks: int = 0

    def update(self, residual, iterations, fallback):
        self.solves += 1
        self.max_residual = max(self.max_residual, residual)
        self.max_iterations = max(self.max_iterations, iterations)
        self.fallbacks += int(fallback)

    def as_dict(self):
        return {"solves": self.solves, "max_relative_residual": self.max_residual,
                "max_iterations": self.max_iterations, "newton_fallbacks": self.fallbacks}


def _resolvent_one(xv, p, grid, guess=None, y=None, stats=None, method="auto"):
    """Solve ``u + eps (nu - Lap) Psi~(u) = x`` for one field (array form).

    Damped fixed point preconditioned by ``(1 + eps a q)^-1`` where ``a`` is
    the midpoint of the range of ``Psi~'`` over the iterate; switches to
    Newton-CG if the residual stops contracting (``method="newton"`` skips
    the fixed point).
    """
    eps, lam = p.epsilon, p.lam
    q = p.nu + grid.ksq_r
    wnorm = grid.rfft_weight * grid.volume / (p.norm_nu + grid.ksq_r)
    X = grid.rfft(xv)
    xnorm = math.sqrt(float((np.abs(X) ** 2 * wnorm).sum()))
    if xnorm == 0.0:
        if stats is not None:
            stats.update(0.0, 0, False)
        return np.zeros_like(xv)
    u = xv.copy() if guess is None else guess.copy()
    if y is None:
        y = np.full(xv.size, np.nan)
    tol = p.solver_tol

    def residual(u):
        R = rectified_field(u, p, y)
        F = grid.rfft(u) + eps * q * grid.rfft(R) - X
        return F, math.sqrt(float((np.abs(F) ** 2 * wnorm).sum())) / xnorm

    F, rel = residual(u)
    it = 0
    prev = rel
    stalled = 0
    while method != "newton" and rel > tol and it < p.solver_max_iter:
        J = np.exp(y)
        d = lam + 1.0 / (lam + J)
        a = 0.5 * (float(d.min()) + float(d.max()))
        u = u - grid.irfft(F / (1.0 + eps * a * q)).reshape(xv.shape)
        F, rel = residual(u)
        it += 1
        stalled = stalled + 1 if rel > 0.5 * prev else 0
        prev = rel
        if stalled >= 3:
            break
    fallback = False
    while rel > tol and it < p.solver_max_iter:
        fallback = True
        u = _newton_cg_step(u, F, y, p, grid, q, xnorm)
        F, rel = residual(u)
        it += 1
    if rel > tol:
        raise NonConvergence(
            f"full-drift resolvent stalled at relative residual {rel:.3e} after {it} iterations",
            residual=rel)
    if stats is not None:
        stats.update(rel, it, fallback)
    return u


def _newton_cg_step(u, F, y, p, grid, q, xnorm):
    """One Newton step on the symmetric form ``I + eps D^1/2 (nu - Lap) D^1/2``."""
    shape = u.shape
    J = np.exp(y).reshape(shape)
    d = p.lam + 1.0 / (p.lam + J)
    sd = np.sqrt(d)
    eps = p.epsilon
    a = float(d.mean())
    f = grid.irfft(F)

    def matvec(w):
        w = w.reshape(shape)
        return (w + eps * sd * grid.irfft(q * grid.rfft(sd * w))).reshape(-1)

    def precond(w):
        return grid.irfft(grid.rfft(w.reshape(shape)) / (1.0 + eps * a * q)).reshape(-1)

    n = u.size
    A = LinearOperator((n, n), matvec=matvec, dtype=float)
    M = LinearOperator((n, n), matvec=precond, dtype=float)
    rhs = -(sd * f).reshape(-1)
    w, info = cg(A, rhs, rtol=1e-3 * p.solver_tol, atol=0.0, M=M, maxiter=500)
    return u + (w.reshape(shape) / sd)


def resolvent_full_drift(x, p, stats=None, method="auto"):
    """``JJ_eps x = (I + eps A_nu)^-1 x`` with ``A_nu = -(Lap - nu) Psi~_lam``.

    Returns ``u`` with ``||u + eps (nu - Lap) Psi~(u) - x||_{H^-1_nu}`` at most
    ``solver_tol * ||x||_{H^-1_nu}`` (shift 1 when ``nu = 0``).
    """
    if not p.epsilon > 0:
        raise ParamError("resolvent_full_drift needs epsilon > 0")
    return ScalarField(x.grid, _resolvent_one(x.values, p, x.grid, stats=stats, method=method))


# ------------------------------------------------------------------------ engine

class Engine:
    """Batched stepper plus on-line accumulators for one configuration."""

    def __init__(self, cfg, model=None):
        self.cfg = cfg
        self.grid = g = cfg.grid
        self.p = cfg.params
        self.model = model if model is not None else cfg.noise_model()
        if self.model.grid != g:
            raise ConfigError("noise model grid does not match the simulation grid")
        self.dt = cfg.dt
        self.q = self.p.nu + g.ksq_r
        self.implicit = 1.0 / (1.0 + self.dt * self.p.lam * self.q)
        self.half_s = 0.5 * self.model.strat_field.values
        self.noise_off = self.model.is_off
        nw = min(cfg.n_weak_modes, self.model.n_modes)
        self.weak_e = self.model.e_stack[:nw]
        e_fields = self.weak_e.reshape((nw,) + g.shape)
        self.weak_le = g.irfft(-self.q * g.rfft(e_fields)).reshape(nw, -1)
        self.stats = SolveStats()

    # noise
    def increments(self, path_ids, first_step, n_steps):
        """Gaussians of shape ``(n_steps, P, K)``."""
        cfg = self.cfg
        out = np.empty((n_steps, len(path_ids), self.model.n_modes))
        for i, pid in enumerate(path_ids):
            out[:, i] = brownian_gaussians(cfg.seed, pid, first_step, n_steps,
                                           self.model.n_modes, cfg.brownian_refinement)
        return out

    def assemble(self, g):
        """``sum_k sqrt(mu_k dt) g_k e_k`` for a batch, one product per path.

        Per-path products keep every path's numbers independent of the batch.
        """
        coef = g * np.sqrt(self.model.mu * self.dt)
        out = np.empty((g.shape[0], self.grid.size))
        for i in range(g.shape[0]):
            np.dot(coef[i], self.model.e_stack, out=out[i])
        return out.reshape((g.shape[0],) + self.grid.shape)

    def step(self, X, Xh, y, g, u_guess=None):
        """Advance the batch ``X`` one step.

        Returns ``(X_new, Xh_new, P, Ph, noise_term, u)`` where ``P`` is the
        shifted Yosida field at the old state, ``Ph`` its coefficients and
        ``noise_term = X (dW + S dt / 2)``.
        """
        grid, p, dt = self.grid, self.p, self.dt
        P = _shifted_yosida(X, p, y)
        Ph = grid.rfft(P)
        if self.noise_off:
            noise = X * (self.half_s * dt)
        else:
            noise = X * (self.assemble(g) + self.half_s * dt)
        u = None
        if p.epsilon == 0:
            Xh_new = (Xh + grid.rfft(noise) - dt * self.q * Ph) * self.implicit
            X_new = grid.irfft(Xh_new)
        else:
            u = np.empty_like(X)
            for i in range(X.shape[0]):
                guess = None if u_guess is None else u_guess[i]
                u[i] = _resolvent_one(X[i], p, grid, guess=guess, stats=self.stats)
            X_new = X + (dt / p.epsilon) * (u - X) + noise
            Xh_new = grid.rfft(X_new)
        if not np.all(np.isfinite(X_new)):
            raise StabilityError("non-finite values after the step")
        return X_new, Xh_new, P, Ph, noise, u


def _trapz_add(acc, a, b, dt):
    acc += 0.5 * dt * (a + b)


def _dot_rows(A, B):
    """``A @ B.T`` without BLAS so results never depend on batch shape."""
    return np.einsum("pi,ji->pj", A, B)


@dataclass
class PathDiagnostics:
    """Per-output-time record of one sample path.

    Integrals ``int_grad_psi``, ``int_dissipation`` and ``int_l2`` are
    trapezoid sums over every time step up to ``t``; ``int_dissipation``
    adds the ``nu`` terms of the energy identity to ``int_grad_psi`` (equal
    when ``nu = 0``). ``negativity_events`` lists ``(step, time,
    fraction, min_value)`` for every step that left the positive cone.
    """

    path_id: int
    t: np.ndarray
    norm_l2_sq: np.ndarray
    norm_hm1_nu_sq: np.ndarray
    nu_grid: tuple
    norm_hm1_own_sq: np.ndarray
    norm_hm1_homog_sq: np.ndarray
    phi_lambda: np.ndarray
    phi_flagged: np.ndarray
    grad_psi_l2_sq: np.ndarray
    int_grad_psi: np.ndarray
    int_dissipation: np.ndarray
    int_l2: np.ndarray
    min_value: np.ndarray
    negativity_fraction: np.ndarray
    mass: np.ndarray
    weak_residuals: np.ndarray
    leakage: np.ndarray
    negativity_events: list = field(default_factory=list)
    solver: dict = field(default_factory=dict)
    gaussians: np.ndarray | None = None
    states: np.ndarray | None = None
    output_states: np.ndarray | None = None
    final_state: np.ndarray | None = None
    run_min_value: float = 0.0

    COLUMNS = ("t", "norm_l2_sq", "norm_hm1_own_sq", "norm_hm1_homog_sq", "phi_lambda", "phi_flagged",
               "grad_psi_l2_sq", "int_grad_psi", "int_dissipation", "int_l2", "min_value",
               "negativity_fraction", "mass", "leakage")

    def rows(self):
        """CSV rows; one per output time."""
        out = []
        for i in range(self.t.size):
            row = {"path": self.path_id}
            for c in self.COLUMNS:
                row[c] = getattr(self, c)[i]
            for j, nu in enumerate(self.nu_grid):
                row[f"norm_hm1_nu_sq[{nu!r}]"] = self.norm_hm1_nu_sq[i, j]
            for j in range(self.weak_residuals.shape[1]):
                row[f"weak_residual[{j + 1}]"] = self.weak_residuals[i, j]
            out.append(row)
        return out


class _Recorder:
    """Accumulates diagnostics for a batch at every step."""

    def __init__(self, eng, X0, path_ids):
        cfg, g = eng.cfg, eng.grid
        self.eng = eng
        self.P = X0.shape[0]
        self.path_ids = list(path_ids)
        n_out = cfg.output_times.size
        nw = eng.weak_e.shape[0]
        P = self.P
        self.out = {
            "norm_l2_sq": np.zeros((n_out, P)),
            "norm_hm1_nu_sq": np.zeros((n_out, P, len(cfg.nu_grid))),
            "norm_hm1_own_sq": np.zeros((n_out, P)),
            "norm_hm1_homog_sq": np.zeros((n_out, P)),
            "phi_lambda": np.zeros((n_out, P)),
            "phi_flagged": np.zeros((n_out, P)),
            "grad_psi_l2_sq": np.zeros((n_out, P)),
            "int_grad_psi": np.zeros((n_out, P)),
            "int_dissipation": np.zeros((n_out, P)),
            "int_l2": np.zeros((n_out, P)),
            "min_value": np.zeros((n_out, P)),
            "negativity_fraction": np.zeros((n_out, P)),
            "mass": np.zeros((n_out, P)),
            "weak_residuals": np.zeros((n_out, P, nw)),
            "leakage": np.zeros((n_out, P)),
        }
        self.events = [[] for _ in range(P)]
        self.run_min = np.full(P, np.inf)
        self.int_grad = np.zeros(P)
        self.int_diss = np.zeros(P)
        self.int_l2 = np.zeros(P)
        self.prev_grad = None
        self.prev_diss = None
        self.prev_l2 = None
        self.weak_acc = np.zeros((P, nw))
        flat0 = X0.reshape(P, -1)
        self.weak0 = _dot_rows(flat0, eng.weak_e) * g.cell_volume
        self.x0 = X0.copy()
        self.x0_l1 = np.abs(flat0).sum(axis=1) * g.cell_volume
        axes = np.meshgrid(*([np.abs(g.coords)] * g.dim), indexing="ij")
        self.shell = np.maximum.reduce(axes) > 0.9 * g.half_length if g.dim > 1 \
            else np.abs(g.coords) > 0.9 * g.half_length
        self.k_out = 0
        self.output_states = np.empty((n_out,) + X0.shape) if cfg.store_outputs else None

    def spectral_norms(self, Xh, Ph):
        """``|X_k|^2`` weights, ``||grad Psi~||^2``, the dissipation rate and ``||X||^2``.

        The dissipation rate is ``-d Phi_lam / dt`` of the noise-free flow:
        ``||grad Psi~||^2 + nu ||Psi~||^2 + nu Psi_lam(0) int Psi~``; the
        ``nu`` terms vanish at ``nu = 0``.
        """
        eng, g, p = self.eng, self.eng.grid, self.eng.p
        axes = tuple(range(1, 1 + g.dim))
        w = g.rfft_weight * g.volume
        a2 = np.abs(Xh) ** 2 * w
        R = Ph + p.lam * Xh
        r2 = np.abs(R) ** 2 * w
        grad = (r2 * g.ksq_r).sum(axis=axes)
        diss = grad
        if p.nu > 0:
            zero = (slice(None),) + (0,) * g.dim
            diss = grad + p.nu * (r2.sum(axis=axes) + p.yosida.psi0 * R[zero].real * g.volume)
        l2 = a2.sum(axis=axes)
        return a2, grad, diss, l2

    def per_step(self, step, X, Xh, Ph, noise, y):
        """Update running integrals with the state at ``step`` (before stepping)."""
        eng, g, dt = self.eng, self.eng.grid, self.eng.dt
        a2, grad, diss, l2 = self.spectral_norms(Xh, Ph)
        if self.prev_grad is not None:
            _trapz_add(self.int_grad, self.prev_grad, grad, dt)
            _trapz_add(self.int_diss, self.prev_diss, diss, dt)
            _trapz_add(self.int_l2, self.prev_l2, l2, dt)
        self.prev_grad, self.prev_diss, self.prev_l2 = grad, diss, l2
        return a2, grad, l2

    def weak_update(self, X, P, noise):
        eng = self.eng
        g = eng.grid
        flatR = (P + eng.p.lam * X).reshape(self.P, -1)
        drift = _dot_rows(flatR, eng.weak_le) * g.cell_volume * eng.dt
        stoch = _dot_rows(noise.reshape(self.P, -1), eng.weak_e) * g.cell_volume
        self.weak_acc += drift + stoch

    def check_sign(self, step, X):
        g = self.eng.grid
        flat = X.reshape(self.P, -1)
        mins = flat.min(axis=1)
        self.run_min = np.minimum(self.run_min, mins)
        for i in np.nonzero(mins < 0)[0]:
            frac = float((flat[i] < 0).mean())
            self.events[i].append((step, step * self.eng.dt, frac, float(mins[i])))
        return mins

    def output(self, X, Xh, y, a2, grad):
        eng, g, p, cfg = self.eng, self.eng.grid, self.eng.p, self.eng.cfg
        k = self.k_out
        P = self.P
        axes = tuple(range(1, 1 + g.dim))
        flat = X.reshape(P, -1)
        o = self.out
        o["norm_l2_sq"][k] = a2.sum(axis=axes)
        for j, nu in enumerate(cfg.nu_grid):
            o["norm_hm1_nu_sq"][k, :, j] = (a2 / (nu + g.ksq_r)).sum(axis=axes)
        o["norm_hm1_own_sq"][k] = (a2 / (p.norm_nu + g.ksq_r)).sum(axis=axes)
        if self.output_states is not None:
            self.output_states[k] = X
        homog = np.zeros_like(g.ksq_r)
        nz = g.ksq_r > 0
        homog[nz] = 1.0 / g.ksq_r[nz]
        o["norm_hm1_homog_sq"][k] = (a2 * homog).sum(axis=axes)
        J = np.exp(y).reshape(P, -1)
        yy = y.reshape(P, -1)
        dens = J * (yy - 1.0) + (flat - J) ** 2 / (2.0 * p.lam) + 0.5 * p.lam * flat ** 2
        o["phi_lambda"][k] = dens.sum(axis=1) * g.cell_volume
        o["phi_flagged"][k] = (flat < 0).any(axis=1)
        o["grad_psi_l2_sq"][k] = grad
        o["int_grad_psi"][k] = self.int_grad
        o["int_dissipation"][k] = self.int_diss
        o["int_l2"][k] = self.int_l2
        mins = flat.min(axis=1)
        o["min_value"][k] = mins
        o["negativity_fraction"][k] = (flat < 0).mean(axis=1)
        o["mass"][k] = flat.sum(axis=1) * g.cell_volume
        cur = _dot_rows(flat, eng.weak_e) * g.cell_volume
        o["weak_residuals"][k] = np.abs(cur - self.weak0 - self.weak_acc)
        diff = np.abs(X - self.x0).reshape(P, -1)[:, self.shell.reshape(-1)]
        o["leakage"][k] = diff.sum(axis=1) * g.cell_volume / self.x0_l1
        self.k_out += 1

    def finish(self, times, solver, gauss=None, states=None, final=None):
        out = []
        cfg = self.eng.cfg
        for i, pid in enumerate(self.path_ids):
            kw = {name: arr[:, i] for name, arr in self.out.items()}
            out.append(PathDiagnostics(
                path_id=pid, t=times.copy(), nu_grid=tuple(cfg.nu_grid),
                negativity_events=self.events[i], solver=dict(solver),
                gaussians=None if gauss is None else gauss[:, i].copy(),
                states=None if states is None else states[:, i].copy(),
                output_states=None if self.output_states is None else self.output_states[:, i].copy(),
                final_state=None if final is None else final[i].copy(),
                run_min_value=float(self.run_min[i]), **kw))
        return out


def simulate_batch(cfg, path_ids, model=None):
    """Run the paths ``path_ids`` in lockstep; returns one PathDiagnostics each."""
    eng = Engine(cfg, model)
    g, p = eng.grid, eng.p
    P = len(path_ids)
    x = cfg.datum.build(g).values
    X = np.broadcast_to(x, (P,) + g.shape).copy()
    Xh = g.rfft(X)
    y = np.full(X.size, np.nan)
    rec = _Recorder(eng, X, path_ids)
    n_steps, stride = cfg.n_steps, cfg.output_stride
    chunk = 256
    gauss_all = np.empty((n_steps, P, eng.model.n_modes)) if cfg.store_increments else None
    states = np.empty((n_steps + 1, P) + g.shape) if cfg.store_states else None
    if states is not None:
        states[0] = X
    u = None
    step = 0
    G = None
    try:
        rec.check_sign(0, X)
        while True:
            last = step == n_steps
            if last:
                P_field = _shifted_yosida(X, p, y)
                Ph = g.rfft(P_field)
                a2, grad, _ = rec.per_step(step, X, Xh, Ph, None, y)
                rec.output(X, Xh, y, a2, grad)
                break
            if step % chunk == 0:
                G = eng.increments(path_ids, step, min(chunk, n_steps - step))
                if gauss_all is not None:
                    gauss_all[step:step + G.shape[0]] = G
            X_new, Xh_new, P_field, Ph, noise, u = eng.step(X, Xh, y, G[step % chunk], u)
            a2, grad, _ = rec.per_step(step, X, Xh, Ph, noise, y)
            if step % stride == 0:
                rec.output(X, Xh, y, a2, grad)
            rec.weak_update(X, P_field, noise)
            X, Xh = X_new, Xh_new
            step += 1
            rec.check_sign(step, X)
            if states is not None:
                states[step] = X
    except (StabilityError, NonConvergence) as exc:
        raise type(exc)(f"{exc} (step {step}, t={step * cfg.dt:.6g}, paths {list(path_ids)})") from exc
    times = cfg.output_times
    return rec.finish(times, eng.stats.as_dict(), gauss_all, states,
                      X if cfg.snapshot_final else None)


def simulate_path(cfg, path_id=0, model=None):
    """Simulate one path; see :func:`simulate_batch`."""
    return simulate_batch(cfg, [path_id], model)[0]


def _batch_worker(args):
    cfg, ids = args
    return simulate_batch(cfg, ids)


def simulate_ensemble(cfg, path_ids=None, workers=1, batch_size=32, model=None):
    """Simulate many paths, optionally across processes; results sorted by path id."""
    ids = list(range(cfg.n_paths)) if path_ids is None else list(path_ids)
    chunks = [ids[i:i + batch_size] for i in range(0, len(ids), batch_size)]
    if workers <= 1 or len(chunks) == 1:
        out = []
        for c in chunks:
            out.extend(simulate_batch(cfg, c, model))
        return out
    from concurrent.futures import ProcessPoolExecutor

    with ProcessPoolExecutor(max_workers=workers) as pool:
        results = list(pool.map(_batch_worker, [(cfg, c) for c in chunks]))
    return [d for r in results for d in r]


def step_ito(state, cfg, mode=None, model=None):
    """One Euler-Maruyama step of a single path.

    ``mode`` must agree with ``cfg.params`` (``direct`` for ``epsilon = 0``,
    ``yosida`` otherwise); it is accepted for explicitness.
    """
    if mode is not None and mode != cfg.params.mode:
        raise ParamError(f"mode {mode!r} does not match epsilon={cfg.params.epsilon}")
    eng = Engine(cfg, model)
    g = eng.grid
    X = state.field.values[None]
    Xh = state.spectrum[None] if state.spectrum is not None else g.rfft(X)
    y = state.log_j.copy() if state.log_j is not None else np.full(X.size, np.nan)
    G = brownian_gaussians(state.seed, state.path_id, state.step_index, 1,
                           eng.model.n_modes, state.refinement)
    guess = None if state.yosida_guess is None else state.yosida_guess[None]
    X_new, Xh_new, _, _, _, u = eng.step(X, Xh, y, G, guess)
    return SolverState(time=state.time + cfg.dt, field=ScalarField(g, X_new[0]),
                       step_index=state.step_index + 1, seed=state.seed,
                       path_id=state.path_id, refinement=state.refinement,
                       spectrum=Xh_new[0], log_j=y,
                       yosida_guess=None if u is None else u[0])


def initial_state(cfg, path_id=0):
    return SolverState(time=0.0, field=cfg.datum.build(cfg.grid), seed=cfg.seed,
                       path_id=path_id, refinement=cfg.brownian_refinement)
