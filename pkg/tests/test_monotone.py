"""Scalar calculus of the logarithm: resolvent, Yosida map, envelope, gap.

Reference values were computed once with mpmath at 50 digits (root of
``x + lam log x = r`` by ``findroot``) and frozen here.
"""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stochlog import monotone as m
from stochlog.errors import DomainError, NonConvergence, ParamError
from stochlog.grid import Grid

P = m.YosidaParams(0.5)

# mpmath oracle, lambda = 0.5
ORACLE = {
    "J0": 0.42630275100686275,
    "Psi0": -0.85260550201372549,
    "J2": 1.7268504111633889,
    "Psi2": 0.54629917767322212,
    "J3": 2.5349191320239735,
    "rect2": 2.3989046796869476,
    "drect2": 0.94906473959225804,
    "env2": -0.70886275369855437,
    "env0": -0.60803678652288196,
    "gap2": -2.5555713431422618,
    "gap3": -4.0813440506949493,
}


def test_oracle_values():
    assert m.resolvent(0.0, P) == pytest.approx(ORACLE["J0"], rel=1e-14)
    assert m.yosida(0.0, P) == pytest.approx(ORACLE["Psi0"], rel=1e-14)
    assert m.resolvent(2.0, P) == pytest.approx(ORACLE["J2"], rel=1e-14)
    assert m.yosida(2.0, P) == pytest.approx(ORACLE["Psi2"], rel=1e-13)
    assert m.resolvent(3.0, P) == pytest.approx(ORACLE["J3"], rel=1e-14)
    assert m.rectified(2.0, P) == pytest.approx(ORACLE["rect2"], rel=1e-13)
    assert m.rectified_derivative(2.0, P) == pytest.approx(ORACLE["drect2"], rel=1e-14)
    assert m.moreau_envelope(2.0, P) == pytest.approx(ORACLE["env2"], rel=1e-13)
    assert m.moreau_envelope(0.0, P) == pytest.approx(ORACLE["env0"], rel=1e-13)
    assert m.propaux_gap(2.0, P) == pytest.approx(ORACLE["gap2"], rel=1e-13)
    assert m.propaux_gap(3.0, P) == pytest.approx(ORACLE["gap3"], rel=1e-13)


def test_psi0_cached():
    assert P.psi0 == pytest.approx(ORACLE["Psi0"], rel=1e-14)
    assert m.rectified(0.0, P) == pytest.approx(0.0, abs=1e-15)


def test_param_validation():
    for bad in (0.0, -1.0, 1.5):
        with pytest.raises(ParamError):
            m.YosidaParams(bad)
    with pytest.raises(ParamError):
        m.YosidaParams(0.5, newton_tol=0.0)
    m.YosidaParams(1.0)


def test_gap_rejects_large_lambda():
    with pytest.raises(ParamError):
        m.propaux_gap(1.0, m.YosidaParams(0.6))


def test_domain_errors():
    with pytest.raises(DomainError):
        m.moreau_envelope(-1.0, P)
    with pytest.raises(DomainError):
        m.propaux_gap(0.0, P)
    with pytest.raises(DomainError):
        m.resolvent(np.nan, P)
    # the extended envelope is finite on the whole line
    assert np.isfinite(m.envelope_extended(-5.0, P))


def test_potential():
    assert m.potential(0.0) == 0.0
    assert m.potential(1.0) == -1.0
    assert m.potential(-1.0) == np.inf


def test_nonconvergence_reports_index():
    with pytest.raises(NonConvergence):
        m.YosidaParams(0.5, max_iter=1)  # psi0 is solved at construction
    p = m.YosidaParams(0.5)
    object.__setattr__(p, "max_iter", 1)
    with pytest.raises(NonConvergence) as info:
        m.log_resolvent(np.array([[0.0, 50.0]]), p)
    assert info.value.index is not None


def test_extreme_arguments():
    r = np.array([-1e3, -50.0, 0.0, 1e-12, 1e3])
    y = m.log_resolvent(r, P)
    assert np.all(np.isfinite(y))
    assert np.all(np.abs(np.exp(y) + 0.5 * y - r) <= 1e-10 * (1 + np.abs(r)))
    # deep negative: J underflows but log J = r / lam to leading order
    assert y[0] == pytest.approx(-2e3, rel=1e-3)


def test_scalar_and_array_shapes():
    assert isinstance(m.resolvent(1.0, P), float)
    a = m.resolvent(np.ones((2, 3)), P)
    assert a.shape == (2, 3)


def test_apply_pointwise():
    g = Grid(2, 8, 1.0)
    f = g.from_function(lambda x, y: 1.0 + 0.5 * np.sin(np.pi * x))
    out = m.apply_pointwise(m.resolvent, f, P)
    assert np.allclose(out.values, m.resolvent(f.values, P))
    out2 = m.apply_pointwise(lambda v, p: m.resolvent(v, p), f, P)
    assert np.array_equal(out.values, out2.values)
    bad = g.from_function(lambda x, y: x - 2.0)
    with pytest.raises(DomainError, match="grid index"):
        m.apply_pointwise(lambda v, p: m.moreau_envelope(v, p), bad, P)


finite = st.floats(-30, 60, allow_nan=False)
lams = st.sampled_from([1.0, 0.5, 0.25, 0.1, 0.01, 1e-4])


@settings(max_examples=200, deadline=None)
@given(finite, finite, lams)
def test_nonexpansive_and_lipschitz(a, b, lam):
    p = m.YosidaParams(lam)
    d = abs(a - b)
    slack = 1e-12 * (1 + abs(a) + abs(b))
    assert abs(m.resolvent(a, p) - m.resolvent(b, p)) <= d + slack
    assert abs(m.yosida(a, p) - m.yosida(b, p)) <= d / lam + slack / lam
    assert (m.yosida(a, p) - m.yosida(b, p)) * (a - b) >= -slack * d / lam


@settings(max_examples=200, deadline=None)
@given(finite, lams)
def test_resolvent_identity(r, lam):
    p = m.YosidaParams(lam)
    J = m.resolvent(r, p)
    y = m.log_resolvent(r, p)
    assert J + lam * y == pytest.approx(r, abs=1e-10 * (1 + abs(r)))
    # the definition (r - J) / lam agrees with the log form up to cancellation
    assert m.yosida(r, p) == pytest.approx((r - J) / lam, abs=1e-10 * (1 + abs(r)) / lam)


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-6, 1e3), st.sampled_from([0.5, 0.25, 0.1, 0.01]))
def test_gap_nonpositive(r, lam):
    assert m.propaux_gap(r, m.YosidaParams(lam)) <= 1e-9


@settings(max_examples=100, deadline=None)
@given(st.floats(-5, 20), lams)
def test_rectified_derivative_matches_difference(r, lam):
    p = m.YosidaParams(lam)
    h = 1e-6 * (1 + abs(r))
    fd = (m.rectified(r + h, p) - m.rectified(r - h, p)) / (2 * h)
    assert fd == pytest.approx(m.rectified_derivative(r, p), rel=1e-5, abs=1e-6)
    assert m.rectified_derivative(r, p) >= lam


def test_yosida_converges_monotonically_to_log():
    r = np.array([0.1, 0.5, 1.0, 2.0, 10.0])
    gaps = np.array([np.abs(m.yosida(r, m.YosidaParams(2.0 ** -k)) - np.log(r))
                     for k in range(1, 21)])
    # r = 1 is a fixed point; elsewhere the error shrinks strictly
    assert np.all(gaps[:, 2] <= 1e-15)
    keep = [0, 1, 3, 4]
    assert np.all(np.diff(gaps[:, keep], axis=0) < 0)
    # first order in lambda: |Psi_lam(r) - ln r| ~ lam |ln r| / r
    lam = 2.0 ** -20
    assert np.all(gaps[-1, keep] <= 2 * lam * np.abs(np.log(r[keep])) / r[keep])


@settings(max_examples=200, deadline=None)
@given(st.floats(-20, 50), lams)
def test_rectified_intermediate_bound(r, lam):
    """``Psi~(r) r >= (1 + lam + 1/lam)^-1 Psi~(r)^2``; checked, not relied on."""
    p = m.YosidaParams(lam)
    R = m.rectified(r, p)
    assert R * r >= R * R / (1 + lam + 1 / lam) - 1e-12 * (1 + R * R)
