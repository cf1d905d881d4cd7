"""Q-Wiener noise on the torus.

``W(t) = sum_k sqrt(mu_k) beta_k(t) e_k`` with a finite family of smooth
modes ``e_k``. The Ito form of ``X o dW`` adds ``1/2 (sigma x sigma)(X)`` with
``(sigma x sigma)(x) = (sum_k mu_k e_k^2) x``.

Gaussians are a pure function of ``(seed, path_id, step, mode)``: each path
owns a Philox stream (key = seed, counter block = path id and step) and
step ``j`` always reads the same raw words, turned into normals by
Box-Muller. Coarse steps are sums of fine ones, so runs at ``dt`` and
``dt/2`` see the same Brownian path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import GridMismatch, ParamError, SummabilityError
from .grid import Grid, ScalarField, check_same_grid, norm_l2

TAIL_TOL = 0.01
MIX_CONSTANT = 4.0  # the squared factor on ||grad e_k||_{L^d} in C0


@dataclass(frozen=True)
class NoiseSpec:
    """Mode family, decay law and size of the noise.

    Parameters
    ----------
    family : {"bumps", "constant"}
        ``bumps`` are tensor-product mollifiers at dyadic centers and scales;
        ``constant`` modes are ``e_k = constant_value`` everywhere.
    n_modes : int
        ``K``.
    decay : {"geometric", "power", "harmonic", "explicit"}
        ``mu_k = scale * rate^-k``, ``scale * k^-rate``, ``scale / k``, or the
        list ``mu``.
    scale : float
        Overall factor; ``0`` switches the noise off.
    """

    family: str = "bumps"
    n_modes: int = 16
    decay: str = "geometric"
    rate: float = 2.0
    scale: float = 1.0
    constant_value: float = 1.0
    mu: tuple = ()

    def __post_init__(self):
        if self.family not in ("bumps", "constant"):
            raise ParamError(f"unknown mode family {self.family!r}")
        if self.decay not in ("geometric", "power", "harmonic", "explicit"):
            raise ParamError(f"unknown decay law {self.decay!r}")
        if self.decay == "explicit":
            object.__setattr__(self, "mu", tuple(float(m) for m in self.mu))
            object.__setattr__(self, "n_modes", len(self.mu))
            if any(m < 0 for m in self.mu):
                raise ParamError("mu entries must be non-negative")
        if self.n_modes < 1:
            raise ParamError("n_modes must be at least 1")
        if self.scale < 0:
            raise ParamError("scale must be non-negative")
        if self.decay == "geometric" and not self.rate > 1:
            raise ParamError("geometric decay needs rate > 1")
        if self.decay == "power" and not self.rate > 0:
            raise ParamError("power decay needs rate > 0")

    def weights(self):
        k = np.arange(1, self.n_modes + 1, dtype=float)
        if self.decay == "geometric":
            return self.scale * self.rate ** -k
        if self.decay == "power":
            return self.scale * k ** -self.rate
        if self.decay == "harmonic":
            return self.scale / k
        return np.array(self.mu)

    def tail_bound(self):
        """Upper bound for ``sum_{k > K} mu_k``; ``inf`` for divergent laws."""
        K = self.n_modes
        if self.scale == 0 or self.decay == "explicit":
            return 0.0
        if self.decay == "geometric":
            return self.scale * self.rate ** -K / (self.rate - 1.0)
        if self.decay == "power":
            return np.inf if self.rate <= 1 else self.scale * K ** (1 - self.rate) / (self.rate - 1)
        return np.inf


def _mollifier(s):
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - s[inside] ** 2))
    return out


def _mollifier_slope(s):
    out = np.zeros_like(s)
    inside = np.abs(s) < 1.0
    si = s[inside]
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - si ** 2)) * (-2.0 * si / (1.0 - si ** 2) ** 2)
    return out


def bump_layout(grid, n_modes):
    """Centers and radii of the first ``n_modes`` dyadic bumps.

    Level ``l`` splits ``[-L/2, L/2]^d`` into ``2^(l d)`` cubes; each carries a
    bump of radius ``L / 2^(l+1)`` (at least three cells) at its center.
    """
    R0 = grid.half_length / 2.0
    out = []
    level = 0
    while len(out) < n_modes:
        m = 2 ** level
        radius = max(R0 / m, 3.0 * grid.spacing)
        c1 = -R0 + (np.arange(m) + 0.5) * (2.0 * R0 / m)
        for idx in np.ndindex(*(m,) * grid.dim):
            out.append((tuple(c1[i] for i in idx), radius))
            if len(out) == n_modes:
                break
        level += 1
    return out


def _bump_mode(grid, center, radius):
    x = grid.coords
    prof = [_mollifier((x - c) / radius) for c in center]
    slope = [_mollifier_slope((x - c) / radius) / radius for c in center]
    e = _outer(prof)
    grads = []
    for i in range(grid.dim):
        parts = list(prof)
        parts[i] = slope[i]
        grads.append(_outer(parts))
    return e, grads


def _outer(vectors):
    out = vectors[0]
    for v in vectors[1:]:
        out = np.multiply.outer(out, v)
    return out


@dataclass(frozen=True)
class Mode:
    e: ScalarField
    mu: float
    sup_norm: float
    grad_ld_norm: float

    @property
    def mu_prime(self):
        return self.sup_norm ** 2 + self.grad_ld_norm ** 2 + 1.0


@dataclass(frozen=True, eq=False)
class NoiseModel:
    """Immutable noise description plus the fields the stepper needs.

    ``e_stack`` has shape ``(K, N^d)``; ``strat_field`` is ``sum mu_k e_k^2``.
    """

    grid: Grid
    spec: NoiseSpec
    modes: tuple
    e_stack: np.ndarray = field(repr=False)
    strat_field: ScalarField = field(repr=False)
    c0: float = 0.0
    trace_sum: float = 0.0
    tail_estimate: float = 0.0

    @property
    def n_modes(self):
        return len(self.modes)

    @property
    def mu(self):
        return np.array([m.mu for m in self.modes])

    @property
    def mu_prime(self):
        return np.array([m.mu_prime for m in self.modes])

    @property
    def sigma_norm_bound(self):
        """``sum mu_k ||e_k||_inf^2``, the bound on ``||sigma x sigma||``."""
        return float(sum(m.mu * m.sup_norm ** 2 for m in self.modes))

    @property
    def is_off(self):
        return not np.any(self.mu > 0)

    @property
    def e_sq_fields(self):
        return [ScalarField(self.grid, m.e.values ** 2) for m in self.modes]

    def manifest(self):
        return {
            "family": self.spec.family,
            "decay": self.spec.decay,
            "n_modes": self.n_modes,
            "mu": [m.mu for m in self.modes],
            "mu_prime": [m.mu_prime for m in self.modes],
            "sup_norm": [m.sup_norm for m in self.modes],
            "grad_ld_norm": [m.grad_ld_norm for m in self.modes],
            "c0": self.c0,
            "trace_sum": self.trace_sum,
            "tail_estimate": self.tail_estimate,
            "embedding_constants": 1.0,
            "orthonormal": False,
            "family_note": ("modes are smooth compactly supported bumps, not an H^-1 orthonormal "
                            "system; Q is diagonal in this family with independent coefficients"),
        }


def build_noise_model(spec, grid):
    """Build modes, per-mode constants, ``C0`` and the Stratonovich field.

    Raises
    ------
    SummabilityError
        If ``max mu'_k * sum_{k>K} mu_k`` exceeds 1% of ``sum_{k<=K} mu_k mu'_k``.
    """
    mu = spec.weights()
    modes = []
    stack = np.empty((spec.n_modes, grid.size))
    h_d = grid.cell_volume
    p = float(grid.dim)
    if spec.family == "constant":
        layout = [None] * spec.n_modes
    else:
        layout = bump_layout(grid, spec.n_modes)
    for k, item in enumerate(layout):
        if item is None:
            e = np.full(grid.shape, float(spec.constant_value))
            gnorm = 0.0
        else:
            e, grads = _bump_mode(grid, *item)
            gmag = np.sqrt(sum(g * g for g in grads))
            gnorm = float((gmag ** p).sum() * h_d) ** (1.0 / p)
        stack[k] = e.reshape(-1)
        modes.append(Mode(ScalarField(grid, e), float(mu[k]), float(np.abs(e).max()), gnorm))
    mu_prime = np.array([m.mu_prime for m in modes])
    trace_sum = float(np.dot(mu, mu_prime))
    tail = spec.tail_bound() * float(mu_prime.max())
    if not np.isfinite(tail) or tail > TAIL_TOL * trace_sum:
        raise SummabilityError(
            f"sum mu_k mu'_k is not resolved by K={spec.n_modes} modes: partial sum "
            f"{trace_sum:.4g}, tail bound {tail:.4g} (decay {spec.decay!r})")
    sup2 = np.array([m.sup_norm ** 2 for m in modes])
    grad2 = np.array([m.grad_ld_norm ** 2 for m in modes])
    c0 = float(np.sum(mu * np.maximum(sup2, 1.0) * (sup2 + MIX_CONSTANT * grad2)))
    strat = (mu[:, None] * stack ** 2).sum(axis=0).reshape(grid.shape)
    return NoiseModel(grid, spec, tuple(modes), stack, ScalarField(grid, strat),
                      c0=c0, trace_sum=trace_sum, tail_estimate=tail)


# ---------------------------------------------------------------- random numbers

def _words_per_step(n_modes):
    return 4 * ((n_modes + 3) // 4)


def gaussians(seed, path_id, first_step, n_steps, n_modes):
    """Standard normals of shape ``(n_steps, n_modes)`` for steps ``first_step...``.

    Entry ``[j, k]`` depends only on ``(seed, path_id, first_step + j, k)``.
    """
    if not 0 <= seed < 2 ** 64:
        raise ParamError("seed must lie in [0, 2^64)")
    if n_steps == 0:
        return np.empty((0, n_modes))
    W = _words_per_step(n_modes)
    bg = np.random.Philox(key=int(seed), counter=[first_step * (W // 4), 0, int(path_id), 0])
    raw = bg.random_raw(n_steps * W)
    u = ((raw >> np.uint64(11)).astype(float) + 0.5) * 2.0 ** -53
    u1, u2 = u[0::2], u[1::2]
    rad = np.sqrt(-2.0 * np.log(u1))
    z = np.empty_like(u)
    z[0::2] = rad * np.cos(2.0 * np.pi * u2)
    z[1::2] = rad * np.sin(2.0 * np.pi * u2)
    return z.reshape(n_steps, W)[:, :n_modes]


def brownian_gaussians(seed, path_id, first_step, n_steps, n_modes, refinement=0):
    """Normals for steps of size ``dt`` built from the ``dt / 2^refinement`` stream."""
    m = 2 ** refinement
    fine = gaussians(seed, path_id, first_step * m, n_steps * m, n_modes)
    return fine.reshape(n_steps, m, n_modes).sum(axis=1) / np.sqrt(m)


@dataclass(frozen=True)
class StepKey:
    """Explicit random state for one increment."""

    seed: int
    path_id: int = 0
    step: int = 0
    refinement: int = 0


@dataclass(frozen=True, eq=False)
class WienerIncrement:
    dt: float
    gaussians: np.ndarray
    assembled: ScalarField


def assemble(model, dt, g):
    """``sum_k sqrt(mu_k dt) g_k e_k``; ``g`` may carry leading batch axes."""
    coef = np.asarray(g) * np.sqrt(model.mu * dt)
    flat = coef @ model.e_stack
    return flat.reshape(np.shape(g)[:-1] + model.grid.shape)


def sample_increment(model, dt, key):
    if not dt > 0:
        raise ParamError("dt must be positive")
    g = brownian_gaussians(key.seed, key.path_id, key.step, 1, model.n_modes, key.refinement)[0]
    return WienerIncrement(dt, g, ScalarField(model.grid, assemble(model, dt, g)))


def sigma_apply(x, dW):
    check_same_grid(x, dW.assembled)
    return ScalarField(x.grid, x.values * dW.assembled.values)


def strat_correction(x, model):
    if x.grid != model.grid:
        raise GridMismatch(f"grid {x.grid} does not match noise grid {model.grid}")
    return ScalarField(x.grid, x.values * model.strat_field.values)


def ito_isometry_check(model, x, n_samples=10_000, dt=1e-2, nu=1.0, seed=0):
    """Empirical ``E||x dW||_H^2 / dt`` against ``sum mu_k ||x e_k||_H^2``.

    ``||x dW||_H^2`` is the quadratic form ``a^T G a`` in the coefficients
    ``a_k = sqrt(mu_k dt) g_k`` with the Gram matrix of the fields ``x e_k``,
    so each sample costs ``O(K^2)`` instead of a transform.
    """
    if n_samples < 100:
        raise ParamError("n_samples must be at least 100")
    g = model.grid
    fields = model.e_stack.reshape((-1,) + g.shape) * x.values
    F = g.rfft(fields)
    w = g.rfft_weight * g.volume
    grams = {
        "L2": _gram(F, w),
        "H-1_nu": _gram(F, w / (nu + g.ksq_r)),
    }
    z = gaussians(seed, 0, 0, n_samples, model.n_modes)
    a = z * np.sqrt(model.mu * dt)
    report = {"n_samples": n_samples, "dt": dt, "nu": nu}
    for name, G in grams.items():
        q = np.einsum("sk,kl,sl->s", a, G, a) / dt
        expected = float(np.dot(model.mu, np.diag(G)))
        mean = float(q.mean())
        band = 3.0 * float(q.std(ddof=1)) / np.sqrt(n_samples)
        report[name] = {
            "empirical": mean,
            "expected": expected,
            "band": band,
            "ratio": mean / expected if expected else (1.0 if mean == 0 else float("inf")),
            "relative_band": band / expected if expected else 0.0,
            "within_band": bool(abs(mean - expected) <= band),
        }
    return report


def _gram(F, weight):
    K = F.shape[0]
    flat = F.reshape(K, -1)
    return ((flat * weight.reshape(-1)) @ flat.conj().T).real


def mode_bound_chain(model, x, nu, embed_const=1.0):
    """Per-mode check of ``||e_k x||_{H^-1_nu}^2 <= ||x||^2 (||e_k||_inf^2 + C^2 ||grad e_k||_d^2)``.

    Returns the ratios LHS / RHS, which should not exceed 1.
    """
    from .grid import norm_hminus1_nu

    xn = norm_hminus1_nu(x, nu) ** 2
    out = []
    for m in model.modes:
        lhs = norm_hminus1_nu(x * m.e, nu) ** 2
        rhs = xn * (m.sup_norm ** 2 + embed_const ** 2 * m.grad_ld_norm ** 2)
        out.append(lhs / rhs if rhs > 0 else 0.0)
    return np.array(out)


def l2_bound_holds(x, model):
    """``||e_k x||_2 <= ||x||_2 ||e_k||_inf`` for every mode."""
    nx = norm_l2(x)
    return all(norm_l2(x * m.e) <= nx * m.sup_norm * (1 + 1e-12) for m in model.modes)
