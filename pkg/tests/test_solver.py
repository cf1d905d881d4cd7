"""Time stepping, the full-drift resolvent and path diagnostics."""

from dataclasses import replace

import numpy as np
import pytest

from stochlog.errors import ConfigError, ParamError, StabilityError
from stochlog.grid import Grid, ScalarField, norm_hminus1_nu, random_smooth_field
from stochlog.monotone import rectified_derivative
from stochlog.noise import NoiseSpec, build_noise_model
from stochlog.solver import (
    DatumSpec,
    RegularizationParams,
    SimConfig,
    SolveStats,
    auto_dt,
    drift_lambda_nu,
    initial_state,
    rectified_field,
    resolvent_full_drift,
    simulate_batch,
    simulate_path,
    stability_bound,
    step_ito,
)

G = Grid(3, 8, 8.0)


def cfg_small(**kw):
    base = dict(grid=G, t_final=0.125, n_outputs=4, seed=3)
    base.update(kw)
    return SimConfig(**base)


def test_params_validation():
    with pytest.raises(ParamError):
        RegularizationParams(lam=0.6)
    RegularizationParams(lam=0.6, energy_diagnostics=False)
    for kw in ({"lam": 0.0}, {"nu": -0.1}, {"nu": 2.0}, {"epsilon": -1.0}, {"solver_tol": 0.0}):
        with pytest.raises(ParamError):
            RegularizationParams(**kw)
    assert RegularizationParams(nu=0.0).norm_nu == 1.0
    assert RegularizationParams(epsilon=1e-3).mode == "yosida"


def test_datum_profiles():
    for prof in ("constant", "bump", "mode"):
        x = DatumSpec(profile=prof, amplitude=0.3).build(G)
        assert x.values.min() >= 0.5 - 0.3 - 1e-12
    with pytest.raises(ParamError):
        DatumSpec(profile="mode", amplitude=0.6)
    with pytest.raises(ParamError):
        DatumSpec(floor=0.0)
    with pytest.raises(ParamError):
        DatumSpec(center=(1.0,)).build(G)


def test_stability_bound_and_auto_dt():
    p = RegularizationParams(lam=0.25, nu=0.1)
    kmax2 = 3 * (np.pi * 8 / (2 * 8.0)) ** 2
    assert stability_bound(G, p) == pytest.approx(0.25 * 0.25 / (0.1 + kmax2))
    assert stability_bound(G, replace(p, epsilon=1e-3)) == 1e-3
    dt = auto_dt(1.0, 0.01)
    assert dt <= 0.01 and dt > 0.005 and np.log2(1.0 / dt) % 1 == 0


def test_config_validation():
    with pytest.raises(StabilityError):
        cfg_small(dt=0.125)
    with pytest.raises(ConfigError):
        cfg_small(n_outputs=3)
    with pytest.raises(ConfigError):
        cfg_small(t_final=-1.0)
    cfg = cfg_small()
    assert cfg.n_steps * cfg.dt == pytest.approx(cfg.t_final)
    assert cfg.output_times.size == 5


def test_zero_horizon_records_datum():
    d = simulate_path(cfg_small(t_final=0.0))
    assert d.t.tolist() == [0.0]
    assert d.int_grad_psi[0] == 0.0 and d.negativity_fraction[0] == 0.0


def test_constant_state_without_noise_is_stationary():
    cfg = cfg_small(noise=NoiseSpec(scale=0.0), datum=DatumSpec(profile="constant"),
                    store_states=True)
    d = simulate_path(cfg)
    assert np.allclose(d.states, 0.5, atol=1e-13)


def test_noise_off_dissipation_and_mass():
    cfg = cfg_small(noise=NoiseSpec(scale=0.0), params=RegularizationParams(lam=0.5))
    d = simulate_path(cfg)
    assert np.all(np.diff(d.phi_lambda) <= 0)
    assert np.array_equal(d.int_dissipation, d.int_grad_psi)
    defect = d.phi_lambda[0] - d.phi_lambda - d.int_grad_psi
    assert np.all(defect >= 0)
    assert np.allclose(d.mass, d.mass[0], rtol=1e-13)


def test_noise_off_shifted_operator():
    """With nu > 0 mass decays, Phi alone may grow, and the full identity keeps its sign."""
    cfg = cfg_small(noise=NoiseSpec(scale=0.0), params=RegularizationParams(lam=0.5, nu=0.1))
    d = simulate_path(cfg)
    assert np.all(np.diff(d.mass) < 0)
    defect = d.phi_lambda[0] - d.phi_lambda - d.int_dissipation
    assert np.all(defect >= 0)
    # the O(dt) defect is small against the gradient dissipation
    assert defect[-1] < 0.05 * d.int_grad_psi[-1]
    assert np.sqrt(d.norm_hm1_own_sq.max() / d.norm_hm1_own_sq[0]) == pytest.approx(1.0)


def test_batch_independence():
    cfg = cfg_small()
    both = simulate_batch(cfg, [0, 1])
    alone = simulate_batch(cfg, [1])[0]
    for c in alone.COLUMNS:
        assert np.array_equal(getattr(both[1], c), getattr(alone, c)), c
    assert not np.array_equal(both[0].norm_l2_sq, both[1].norm_l2_sq)


def test_step_ito_matches_engine():
    cfg = cfg_small(store_states=True)
    d = simulate_path(cfg, path_id=2)
    s = initial_state(cfg, path_id=2)
    for n in range(3):
        s = step_ito(s, cfg)
        assert np.allclose(s.field.values, d.states[n + 1], rtol=1e-13, atol=1e-14)
    with pytest.raises(ParamError):
        step_ito(s, cfg, mode="yosida")


def test_refinement_couples_paths():
    cfg = cfg_small(store_increments=True)
    fine = replace(cfg, dt=cfg.dt / 2, brownian_refinement=0, store_increments=True)
    coarse = replace(cfg, brownian_refinement=1)
    gf = simulate_path(fine).gaussians
    gc = simulate_path(coarse).gaussians
    assert np.allclose(gc, (gf[0::2] + gf[1::2]) / np.sqrt(2))


def test_positivity_at_validated_dt():
    d = simulate_path(cfg_small())
    assert d.negativity_fraction.max() == 0.0 and not d.negativity_events
    assert d.run_min_value > 0


def test_drift_of_constant():
    p = RegularizationParams(lam=0.25, nu=0.1)
    model = build_noise_model(NoiseSpec(scale=0.0), G)
    x = G.constant(2.0)
    # (Lap - nu) of a constant is -nu times it
    expected = -0.1 * rectified_field(x.values, p)
    assert np.allclose(drift_lambda_nu(x, p, model).values, expected)


class TestFullDriftResolvent:
    P = RegularizationParams(lam=0.25, nu=0.1, epsilon=1e-2)

    def _residual(self, u, x, p):
        g = x.grid
        q = p.nu + g.ksq_r
        R = g.rfft(rectified_field(u.values, p))
        F = g.rfft(u.values) + p.epsilon * q * R - g.rfft(x.values)
        res = ScalarField(g, g.irfft(F))
        return norm_hminus1_nu(res, p.norm_nu) / norm_hminus1_nu(x, p.norm_nu)

    def test_residual_below_tolerance(self):
        x = random_smooth_field(G, np.random.default_rng(0), mean=1.0, amplitude=0.4)
        st = SolveStats()
        u = resolvent_full_drift(x, self.P, stats=st)
        assert self._residual(u, x, self.P) <= 1e-10
        assert st.max_residual <= 1e-10 and st.solves == 1

    def test_newton_agrees_with_fixed_point(self):
        x = random_smooth_field(G, np.random.default_rng(1), mean=1.0, amplitude=0.4)
        a = resolvent_full_drift(x, self.P)
        b = resolvent_full_drift(x, self.P, method="newton")
        assert np.max(np.abs(a.values - b.values)) < 1e-9

    def test_linearization(self):
        """``u - c`` solves the linearized problem up to O(amplitude^2)."""
        p = self.P
        c = 1.0
        d = rectified_derivative(c, p.yosida)
        h = random_smooth_field(G, np.random.default_rng(2))
        h = h - h.mean()
        errs = []
        for amp in (1e-2, 1e-3):
            x = G.constant(c) + h * amp
            u = resolvent_full_drift(x, p)
            uc = resolvent_full_drift(G.constant(c), p)
            lin = G.irfft(G.rfft(h.values * amp) / (1.0 + p.epsilon * d * (p.nu + G.ksq_r)))
            errs.append(np.max(np.abs(u.values - uc.values - lin)))
        assert errs[1] < errs[0] / 50  # quadratic: factor 100 for a tenfold amplitude

    def test_requires_epsilon(self):
        with pytest.raises(ParamError):
            resolvent_full_drift(G.constant(1.0), RegularizationParams())

    def test_dt_must_not_exceed_epsilon(self):
        with pytest.raises(StabilityError):
            cfg_small(params=self.P, dt=0.125 / 8)

    def test_yosida_path(self):
        cfg = cfg_small(params=replace(self.P, epsilon=1.0 / 64), t_final=0.0625, n_outputs=2)
        d = simulate_path(cfg)
        assert d.solver["max_relative_residual"] <= 1e-10
        assert d.negativity_fraction.max() == 0.0


def test_drift_trivial_cases():
    p = RegularizationParams(lam=0.25)
    model = build_noise_model(NoiseSpec(), G)
    assert np.allclose(drift_lambda_nu(G.zeros(), p, model).values, 0.0, atol=1e-15)
    c = 1.7
    out = drift_lambda_nu(G.constant(c), p, model).values
    assert np.allclose(out, 0.5 * model.strat_field.values * c, rtol=1e-12, atol=1e-14)


def test_full_drift_resolvent_on_constants():
    p = RegularizationParams(lam=0.25, epsilon=1e-2)
    assert np.allclose(resolvent_full_drift(G.zeros(), p).values, 0.0, atol=1e-14)
    assert np.allclose(resolvent_full_drift(G.constant(0.8), p).values, 0.8, rtol=1e-12)


def test_linearized_decay_rate():
    """A small pure mode on a constant decays like exp(-Psi~'(c)(|k|^2 + nu) t)."""
    c, amp = 1.0, 1e-4
    p = RegularizationParams(lam=0.25, nu=0.1)
    k = np.pi / G.half_length
    datum = DatumSpec(profile="mode", floor=c, amplitude=amp, wavenumber=1)
    cfg = cfg_small(noise=NoiseSpec(scale=0.0), params=p, datum=datum, t_final=0.5,
                    n_outputs=2, snapshot_final=True)
    cfg = replace(cfg, dt=cfg.dt / 4)
    d = simulate_path(cfg)
    x0 = datum.build(G).values - c
    got = np.sum((d.final_state - c) * x0) / np.sum(x0 * x0)
    rate = rectified_derivative(c, p.yosida) * (k ** 2 + p.nu)
    assert got == pytest.approx(np.exp(-rate * cfg.t_final), rel=1e-2)


def test_fixed_seed_is_bit_identical():
    a, b = simulate_path(cfg_small(), path_id=4), simulate_path(cfg_small(), path_id=4)
    for c in a.COLUMNS:
        assert np.array_equal(getattr(a, c), getattr(b, c))
