"""Torus grid, Fourier multipliers, Sobolev norms and field I/O.

Reference values are closed forms for trigonometric polynomials.
"""

import numpy as np
import pytest

from stochlog.errors import GridMismatch, ParamError, ZeroModeError
from stochlog.grid import (
    Grid,
    ScalarField,
    gradient,
    inner_l2,
    inverse_transform,
    laplacian,
    norm_h1,
    norm_hminus1_nu,
    norm_homogeneous,
    norm_l2,
    pairing_hminus1_nu,
    random_smooth_field,
    read_field_csv,
    read_snapshot,
    remove_mean,
    shifted_inverse,
    transform,
    write_field_csv,
    write_snapshot,
)


@pytest.fixture
def g3():
    return Grid(3, 16, 4.0)


@pytest.fixture
def rng():
    return np.random.default_rng(11)


def test_validation():
    with pytest.raises(ParamError):
        Grid(4, 16, 1.0)
    with pytest.raises(ParamError):
        Grid(3, 12, 1.0)
    with pytest.raises(ParamError):
        Grid(3, 16, 0.0)
    assert Grid(3).dim_three and not Grid(2, 8, 1.0).dim_three


def test_cosine_norms_closed_form():
    L, nu = 2.0, 0.3
    g = Grid(1, 32, L)
    k = np.pi / L
    f = g.from_function(lambda x: np.cos(k * x))
    # int_{-L}^{L} cos^2 = L
    assert norm_l2(f) ** 2 == pytest.approx(L, rel=1e-14)
    assert norm_hminus1_nu(f, nu) ** 2 == pytest.approx(L / (nu + k ** 2), rel=1e-13)
    assert norm_h1(f) ** 2 == pytest.approx(L * (1 + k ** 2), rel=1e-13)
    assert norm_homogeneous(f, -1.0) ** 2 == pytest.approx(L / k ** 2, rel=1e-13)


def test_constant_hminus1(g3):
    c, nu = 1.7, 0.5
    f = g3.constant(c)
    expected = abs(c) * g3.volume ** 0.5 / np.sqrt(nu)
    assert norm_hminus1_nu(f, nu) == pytest.approx(expected, rel=1e-14)


def test_plancherel(g3, rng):
    f = random_smooth_field(g3, rng, mean=0.4)
    F = transform(f)
    full = g3.volume * float(np.sum(np.abs(F.coeffs) ** 2))
    assert full == pytest.approx(norm_l2(f) ** 2, rel=1e-12)
    assert g3.spectral_sum(g3.rfft(f.values)) == pytest.approx(norm_l2(f) ** 2, rel=1e-12)
    assert np.allclose(inverse_transform(F).values, f.values, atol=1e-13)
    assert F.hermitian_defect() == 0.0


def test_laplacian_eigenfunction(g3):
    k = np.pi / g3.half_length
    f = g3.from_function(lambda x, y, z: np.sin(2 * k * x) * np.cos(k * z))
    lap = laplacian(f)
    assert np.max(np.abs(lap.values + 5 * k ** 2 * f.values)) < 1e-12
    gx, gy, gz = gradient(f)
    exact = 2 * k * np.cos(2 * k * g3.mesh()[0]) * np.cos(k * g3.mesh()[2])
    assert np.max(np.abs(gx.values - exact)) < 1e-12
    assert np.max(np.abs(gy.values)) < 1e-12


def test_multiplier_composition(g3, rng):
    f = random_smooth_field(g3, rng, mean=1.0)
    nu = 0.7
    a = shifted_inverse(shifted_inverse(f, nu, 0.5), nu, 0.5)
    b = shifted_inverse(f, nu, 1.0)
    assert norm_l2(a - b) <= 1e-12 * norm_l2(b)
    # (nu - Lap)(nu - Lap)^-1 = I
    back = (shifted_inverse(f, nu, 1.0) * nu) - laplacian(shifted_inverse(f, nu, 1.0))
    assert norm_l2(back - f) <= 1e-12 * norm_l2(f)


def test_pairing_methods_agree(g3, rng):
    u = random_smooth_field(g3, rng, mean=0.3)
    x = random_smooth_field(g3, rng, mean=-0.2)
    for nu in (1.0, 0.1, 0.01):
        a = pairing_hminus1_nu(u, x, nu, "multiplier")
        b = pairing_hminus1_nu(u, x, nu, "halves")
        assert abs(a - b) <= 1e-10 * abs(a)
        assert pairing_hminus1_nu(u, u, nu) == pytest.approx(norm_hminus1_nu(u, nu) ** 2, rel=1e-12)


def test_hminus1_monotone_in_nu(g3, rng):
    f = random_smooth_field(g3, rng, mean=0.5)
    vals = [norm_hminus1_nu(f, nu) for nu in (1.0, 0.5, 0.1, 0.01)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_zero_mode_guard(g3, rng):
    f = random_smooth_field(g3, rng, mean=1.0)
    with pytest.raises(ZeroModeError):
        norm_homogeneous(f, -1.0)
    assert norm_homogeneous(remove_mean(f), -1.0) > 0
    with pytest.raises(ParamError):
        shifted_inverse(f, 0.0, 1.0)
    with pytest.raises(ParamError):
        norm_hminus1_nu(f, 0.0)


def test_grid_mismatch():
    a = Grid(2, 8, 1.0).constant(1.0)
    b = Grid(2, 16, 1.0).constant(1.0)
    with pytest.raises(GridMismatch):
        inner_l2(a, b)
    with pytest.raises(GridMismatch):
        _ = a + b
    with pytest.raises(GridMismatch):
        ScalarField(Grid(2, 8, 1.0), np.zeros((4, 4)))


def test_batched_transform(g3, rng):
    f = random_smooth_field(g3, rng)
    h = random_smooth_field(g3, rng)
    stack = np.stack([f.values, h.values])
    F = g3.rfft(stack)
    assert np.allclose(F[0], g3.rfft(f.values)) and np.allclose(F[1], g3.rfft(h.values))
    assert np.allclose(g3.irfft(F), stack, atol=1e-13)


def test_snapshot_roundtrip(tmp_path, g3, rng):
    f = random_smooth_field(g3, rng, mean=2.0)
    p = tmp_path / "f.bin"
    write_snapshot(p, f)
    assert p.stat().st_size == 16 + 8 * g3.size
    back = read_snapshot(p)
    assert back.grid == g3 and np.array_equal(back.values, f.values)
    p.write_bytes(p.read_bytes()[:-8])
    with pytest.raises(GridMismatch):
        read_snapshot(p)


def test_field_csv_roundtrip(tmp_path):
    g = Grid(2, 8, 1.5)
    f = random_smooth_field(g, np.random.default_rng(0))
    write_field_csv(tmp_path / "f.csv", f)
    back = read_field_csv(tmp_path / "f.csv")
    assert back.grid == g and np.array_equal(back.values, f.values)


def test_laplacian_self_adjoint(g3, rng):
    f = random_smooth_field(g3, rng, mean=0.3)
    h = random_smooth_field(g3, rng, mean=-0.1)
    a, b = inner_l2(laplacian(f), h), inner_l2(f, laplacian(h))
    assert abs(a - b) <= 1e-10 * abs(a)


def test_homogeneous_dominance_and_duality(g3, rng):
    u = remove_mean(random_smooth_field(g3, rng))
    v = remove_mean(random_smooth_field(g3, rng))
    hom = norm_homogeneous(u, -1.0)
    vals = [norm_hminus1_nu(u, nu) for nu in (1.0, 1e-2, 1e-6)]
    assert all(x <= hom * (1 + 1e-12) for x in vals)
    assert vals[-1] == pytest.approx(hom, rel=1e-5)
    for s in (1.0, 0.5):
        assert abs(inner_l2(u, v)) <= norm_homogeneous(u, s) * norm_homogeneous(v, -s) * (1 + 1e-12)
    # s = 1 is the gradient seminorm
    grad_sq = sum(norm_l2(gi) ** 2 for gi in gradient(u))
    assert norm_homogeneous(u, 1.0) ** 2 == pytest.approx(grad_sq, rel=1e-12)


def test_embedding_constant_is_finite(g3):
    from stochlog.grid import fit_embedding_constant

    c = fit_embedding_constant(g3, np.random.default_rng(0), n_samples=12)
    assert 0 < c < np.inf
    with pytest.raises(ParamError):
        fit_embedding_constant(Grid(2, 8, 1.0), np.random.default_rng(0))
