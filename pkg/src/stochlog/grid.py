"""Periodic-torus discretization with Fourier multipliers and Sobolev norms.

The torus is ``[-L, L)^d`` sampled on ``N`` points per axis. Forward
transforms carry the factor ``1/N^d``, so for a field ``f`` with coefficients
``F``::

    ||f||_{L^2}^2 = (2L)^d * sum_k |F_k|^2

Wavevectors are ``k = (pi / L) * m`` with integer ``m``. Every norm is the
exact norm of the trigonometric interpolant of the grid samples.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.fft as sfft

from .errors import GridMismatch, ParamError, ZeroModeError

MEAN_TOL = 1e-10
SNAPSHOT_HEADER = struct.Struct("<iid")


@dataclass(frozen=True)
class Grid:
    """Uniform periodic grid on ``[-L, L)^d``.

    Parameters
    ----------
    dim : int
        Spatial dimension, 1 to 3. Only ``dim=3`` matches the setting of the
        analysis; lower dimensions are for smoke tests and are flagged.
    n : int
        Points per axis, a power of two with ``n >= 4``.
    half_length : float
        Half the box side ``L``.
    """

    dim: int = 3
    n: int = 32
    half_length: float = 8.0

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ParamError(f"dim must be 1, 2 or 3, got {self.dim}")
        if self.n < 4 or self.n & (self.n - 1):
            raise ParamError(f"n must be a power of two >= 4, got {self.n}")
        if not self.half_length > 0:
            raise ParamError(f"half_length must be positive, got {self.half_length}")

    @property
    def dim_three(self):
        return self.dim >= 3

    @property
    def shape(self):
        return (self.n,) * self.dim

    @property
    def size(self):
        return self.n ** self.dim

    @property
    def spacing(self):
        return 2.0 * self.half_length / self.n

    @property
    def cell_volume(self):
        return self.spacing ** self.dim

    @property
    def volume(self):
        return (2.0 * self.half_length) ** self.dim

    @property
    def axes(self):
        return tuple(range(self.dim))

    @cached_property
    def coords(self):
        x = -self.half_length + self.spacing * np.arange(self.n)
        return x

    def mesh(self):
        """Coordinate arrays, one per axis, each of shape ``self.shape``."""
        return np.meshgrid(*([self.coords] * self.dim), indexing="ij")

    @cached_property
    def wavenumbers(self):
        """1D wavenumbers ``(pi/L) * m`` in FFT order."""
        return (np.pi / self.half_length) * sfft.fftfreq(self.n, 1.0 / self.n)

    @cached_property
    def ksq(self):
        """``|k|^2`` on the full complex spectrum."""
        k = self.wavenumbers
        grids = np.meshgrid(*([k] * self.dim), indexing="ij")
        return sum(g * g for g in grids)

    @cached_property
    def ksq_r(self):
        """``|k|^2`` on the half spectrum used by real transforms."""
        k = self.wavenumbers
        kr = (np.pi / self.half_length) * np.arange(self.n // 2 + 1)
        grids = np.meshgrid(*([k] * (self.dim - 1) + [kr]), indexing="ij")
        return sum(g * g for g in grids)

    @cached_property
    def rfft_weight(self):
        """Multiplicity of each half-spectrum entry in the full spectrum."""
        w = np.full(self.n // 2 + 1, 2.0)
        w[0] = 1.0
        w[-1] = 1.0
        shape = (1,) * (self.dim - 1) + (self.n // 2 + 1,)
        return np.broadcast_to(w.reshape(shape), self.ksq_r.shape)

    @property
    def kmax_sq(self):
        """Largest ``|k|^2`` on the grid, ``d * (pi N / (2L))^2``."""
        return self.dim * (np.pi * self.n / (2.0 * self.half_length)) ** 2

    @property
    def fft_axes(self):
        """Trailing axes, so leading batch dimensions pass through transforms."""
        return tuple(range(-self.dim, 0))

    def rfft(self, values):
        return sfft.rfftn(values, axes=self.fft_axes) / self.size

    def irfft(self, coeffs):
        return sfft.irfftn(coeffs * self.size, s=self.shape, axes=self.fft_axes)

    def spectral_sum(self, coeffs_r, multiplier=None):
        """``(2L)^d * sum_k m(k) |F_k|^2`` from half-spectrum coefficients."""
        p = np.abs(coeffs_r) ** 2 * self.rfft_weight
        if multiplier is not None:
            p = p * multiplier
        return self.volume * float(p.sum())

    def spectral_dot(self, a_r, b_r, multiplier=None):
        """``(2L)^d * sum_k m(k) Re(A_k conj(B_k))`` from half spectra."""
        p = (a_r * np.conj(b_r)).real * self.rfft_weight
        if multiplier is not None:
            p = p * multiplier
        return self.volume * float(p.sum())

    def zeros(self):
        return ScalarField(self, np.zeros(self.shape))

    def constant(self, c):
        return ScalarField(self, np.full(self.shape, float(c)))

    def from_function(self, func):
        """Sample ``func(*coords)`` on the grid."""
        return ScalarField(self, np.asarray(func(*self.mesh()), dtype=float))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real samples of a function on a :class:`Grid`; immutable by convention."""

    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            if v.size != self.grid.size:
                raise GridMismatch(f"values of shape {v.shape} do not fit grid {self.grid.shape}")
            v = v.reshape(self.grid.shape)
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", v)

    def _other(self, other):
        if isinstance(other, ScalarField):
            check_same_grid(self, other)
            return other.values
        return other

    def __add__(self, other):
        return ScalarField(self.grid, self.values + self._other(other))

    __radd__ = __add__

    def __sub__(self, other):
        return ScalarField(self.grid, self.values - self._other(other))

    def __rsub__(self, other):
        return ScalarField(self.grid, self._other(other) - self.values)

    def __mul__(self, other):
        return ScalarField(self.grid, self.values * self._other(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return ScalarField(self.grid, self.values / self._other(other))

    def __neg__(self):
        return ScalarField(self.grid, -self.values)

    def mean(self):
        return float(self.values.mean())

    def integral(self):
        return float(self.values.sum()) * self.grid.cell_volume

    def sup_norm(self):
        return float(np.abs(self.values).max())


@dataclass(frozen=True, eq=False)
class SpectralField:
    """Complex Fourier coefficients (full spectrum, ``1/N^d`` normalized)."""

    grid: Grid
    coeffs: np.ndarray

    def hermitian_defect(self):
        """Max deviation from ``F(-k) = conj(F(k))``; zero for real fields."""
        c = self.coeffs
        flipped = np.conj(np.roll(np.flip(c), 1, axis=self.grid.axes))
        return float(np.abs(c - flipped).max())


def check_same_grid(*fields):
    grid = fields[0].grid
    for f in fields[1:]:
        if f.grid != grid:
            raise GridMismatch(f"grid {f.grid} does not match {grid}")
    return grid


def transform(f):
    """Full complex spectrum of ``f``."""
    g = f.grid
    return SpectralField(g, sfft.fftn(f.values) / g.size)


def inverse_transform(F):
    g = F.grid
    vals = sfft.ifftn(F.coeffs * g.size)
    return ScalarField(g, vals.real)


def _apply_multiplier(f, mult):
    g = f.grid
    return ScalarField(g, g.irfft(g.rfft(f.values) * mult))


def laplacian(f):
    return _apply_multiplier(f, -f.grid.ksq_r)


def gradient(f):
    """Spectral gradient; Nyquist components are dropped so the result is real."""
    g = f.grid
    F = g.rfft(f.values)
    k = g.wavenumbers.copy()
    if g.n % 2 == 0:
        k[g.n // 2] = 0.0
    kr = (np.pi / g.half_length) * np.arange(g.n // 2 + 1)
    kr[-1] = 0.0
    out = []
    for axis in range(g.dim):
        kk = kr if axis == g.dim - 1 else k
        shape = [1] * g.dim
        shape[axis] = kk.size
        out.append(ScalarField(g, g.irfft(1j * kk.reshape(shape) * F)))
    return out


def _shifted_multiplier(grid, nu, s, coeffs_r):
    if nu < 0:
        raise ParamError(f"nu must be non-negative, got {nu}")
    base = nu + grid.ksq_r
    mult = np.empty_like(base)
    nz = base > 0
    mult[nz] = base[nz] ** (-s)
    if not nz.all():
        # nu == 0: the zero mode is only admissible for a mean-free field
        if s > 0:
            zero_l2 = abs(coeffs_r.flat[0]) * np.sqrt(grid.volume)
            total = np.sqrt(grid.spectral_sum(coeffs_r))
            if zero_l2 > MEAN_TOL * total:
                raise ParamError("nu = 0 with a nonzero mean: (nu - Laplacian)^-s is singular")
            mult[~nz] = 0.0
        else:
            mult[~nz] = 1.0 if s == 0 else 0.0
    return mult


def shifted_inverse(f, nu, s=1.0):
    """Apply the multiplier ``(nu + |k|^2)^(-s)``, i.e. ``(nu - Laplacian)^(-s)``."""
    g = f.grid
    F = g.rfft(f.values)
    return ScalarField(g, g.irfft(F * _shifted_multiplier(g, nu, s, F)))


def inner_l2(f, h):
    check_same_grid(f, h)
    return float(np.vdot(f.values, h.values)) * f.grid.cell_volume


def norm_l2(f):
    return float(np.sqrt(np.vdot(f.values, f.values) * f.grid.cell_volume))


def norm_lp(f, p):
    return float((np.abs(f.values) ** p).sum() * f.grid.cell_volume) ** (1.0 / p)


def norm_h1(f):
    g = f.grid
    return np.sqrt(g.spectral_sum(g.rfft(f.values), 1.0 + g.ksq_r))


def norm_hminus1_nu(f, nu):
    if not nu > 0:
        raise ParamError(f"nu must be positive, got {nu}")
    g = f.grid
    return np.sqrt(g.spectral_sum(g.rfft(f.values), 1.0 / (nu + g.ksq_r)))


def pairing_hminus1_nu(u, x, nu, method="multiplier"):
    """``<u, x>`` in ``H^-1_nu``.

    ``method="multiplier"`` sums ``(nu + |k|^2)^-1 Re(U conj X)``;
    ``method="halves"`` forms ``<(nu - Lap)^-1/2 u, (nu - Lap)^-1/2 x>_2``.
    """
    if not nu > 0:
        raise ParamError(f"nu must be positive, got {nu}")
    g = check_same_grid(u, x)
    if method == "multiplier":
        return g.spectral_dot(g.rfft(u.values), g.rfft(x.values), 1.0 / (nu + g.ksq_r))
    if method == "halves":
        return inner_l2(shifted_inverse(u, nu, 0.5), shifted_inverse(x, nu, 0.5))
    raise ValueError(f"unknown method {method!r}")


def zero_mode_guard(f):
    """Raise :class:`ZeroModeError` unless the mean of ``f`` is negligible.

    The zero-mode share of the L2 norm, ``|mean| (2L)^{d/2}``, must not exceed
    ``1e-10 * ||f||_{L^2}``.
    """
    zero_l2 = abs(f.mean()) * np.sqrt(f.grid.volume)
    if zero_l2 > MEAN_TOL * norm_l2(f):
        raise ZeroModeError(
            f"field has mean {f.mean():.3e}; the homogeneous norm of negative order "
            "is undefined on the torus (use norm_hminus1_nu at the smallest nu)")


def norm_homogeneous(f, s):
    """Homogeneous Sobolev norm ``(2L)^d sum_{k != 0} |k|^{2s} |F_k|^2``, square-rooted."""
    g = f.grid
    if s == 0:
        return norm_l2(f)
    if s < 0:
        zero_mode_guard(f)
    mult = np.zeros_like(g.ksq_r)
    nz = g.ksq_r > 0
    mult[nz] = g.ksq_r[nz] ** s
    return np.sqrt(g.spectral_sum(g.rfft(f.values), mult))


def remove_mean(f):
    return ScalarField(f.grid, f.values - f.values.mean())


def random_smooth_field(grid, rng, corr_length=2.0, mean=0.0, amplitude=1.0):
    """Gaussian random field with a Gaussian spectrum, rescaled to unit L2 density.

    The zero mode is removed before adding ``mean``.
    """
    white = rng.standard_normal(grid.shape)
    F = grid.rfft(white) * np.exp(-0.5 * grid.ksq_r * corr_length ** 2)
    F.flat[0] = 0.0
    v = grid.irfft(F)
    rms = np.sqrt(np.mean(v * v))
    return ScalarField(grid, mean + amplitude * v / rms)


def fit_embedding_constant(grid, rng, n_samples=64, corr_lengths=(0.75, 1.5, 3.0), nu=None):
    """Largest observed ``||u||_{L^{2d/(d-2)}} / ||u||`` over random smooth fields.

    The denominator is the homogeneous ``H^1`` seminorm on mean-free fields
    (``nu=None``) or the ``H^1_nu`` norm ``(nu ||u||^2 + ||grad u||^2)^{1/2}``.
    This is an empirical lower estimate of the embedding constant, reported
    rather than compared against any closed form.
    """
    if grid.dim < 3:
        raise ParamError("the critical Sobolev exponent needs dim >= 3")
    p = 2.0 * grid.dim / (grid.dim - 2.0)
    best = 0.0
    for i in range(n_samples):
        ell = corr_lengths[i % len(corr_lengths)]
        u = random_smooth_field(grid, rng, corr_length=ell)
        if nu is None:
            denom = norm_homogeneous(u, 1.0)
        else:
            F = grid.rfft(u.values)
            denom = np.sqrt(grid.spectral_sum(F, nu + grid.ksq_r))
        best = max(best, norm_lp(u, p) / denom)
    return best


def write_snapshot(path, f):
    """Binary layout: ``<i4 dim, <i4 N, <f8 L`` then ``N^d`` little-endian f8, C order."""
    g = f.grid
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_HEADER.pack(g.dim, g.n, g.half_length))
        fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_snapshot(path):
    data = Path(path).read_bytes()
    dim, n, half_length = SNAPSHOT_HEADER.unpack_from(data)
    grid = Grid(dim, n, half_length)
    values = np.frombuffer(data, dtype="<f8", offset=SNAPSHOT_HEADER.size)
    if values.size != grid.size:
        raise GridMismatch(f"payload holds {values.size} values, header implies {grid.size}")
    return ScalarField(grid, values.reshape(grid.shape).astype(float))


def write_field_csv(path, f, max_points=65536):
    """CSV with a ``# dim,n,half_length`` header line then ``x1..xd,value`` rows."""
    g = f.grid
    if g.size > max_points:
        raise ValueError(f"grid has {g.size} points; CSV export is limited to {max_points}")
    cols = [m.reshape(-1) for m in g.mesh()]
    with open(path, "w", newline="") as fh:
        fh.write(f"# {g.dim},{g.n},{g.half_length!r}\n")
        w = csv.writer(fh)
        w.writerow([f"x{i + 1}" for i in range(g.dim)] + ["value"])
        for row in zip(*cols, f.values.reshape(-1)):
            w.writerow([repr(float(v)) for v in row])


def read_field_csv(path):
    with open(path, newline="") as fh:
        header = fh.readline().lstrip("#").strip().split(",")
        grid = Grid(int(header[0]), int(header[1]), float(header[2]))
        rows = list(csv.reader(fh))[1:]
    values = np.array([float(r[-1]) for r in rows])
    return ScalarField(grid, values.reshape(grid.shape))
