"""Energy, moment, weak-form, rate and operator diagnostics."""

from dataclasses import replace

import numpy as np
import pytest

from stochlog.diagnostics import (
    aggregate,
    deterministic_sup_ratio,
    dissipation_identity,
    dt_halving_allowance,
    energy_balance_check,
    fit_moment_constant,
    moment_bound_check,
    MomentCell,
    nu_rate_check,
    operator_spot_checks,
    phi_lambda,
    positivity_report,
    weak_form_residual,
)
from stochlog.errors import ParamError, ReplayError
from stochlog.grid import Grid
from stochlog.monotone import envelope_extended
from stochlog.noise import NoiseSpec
from stochlog.solver import (
    DatumSpec,
    RegularizationParams,
    SimConfig,
    simulate_ensemble,
    simulate_path,
)

G = Grid(3, 8, 8.0)


def cfg_small(**kw):
    base = dict(grid=G, t_final=0.125, n_outputs=4, seed=5)
    base.update(kw)
    return SimConfig(**base)


def test_phi_lambda_constants():
    p = RegularizationParams(lam=0.5)
    # Phi of the constant 1 per unit volume: j_lam(1) + lam / 2
    one = phi_lambda(G.constant(1.0), p) / G.volume
    assert one == pytest.approx(float(envelope_extended(1.0, p.yosida)) + 0.25, rel=1e-13)
    assert phi_lambda(G.zeros(), p) / G.volume == pytest.approx(-0.60803678652288196, rel=1e-12)
    val, flagged = phi_lambda(G.constant(-1.0), p, return_flag=True)
    assert flagged and np.isfinite(val)
    with pytest.raises(ParamError):
        phi_lambda(G.constant(1.0), RegularizationParams(lam=0.6, energy_diagnostics=False))


def test_recorded_phi_matches_direct_evaluation():
    cfg = cfg_small(snapshot_final=True)
    d = simulate_path(cfg)
    from stochlog.grid import ScalarField

    direct = phi_lambda(ScalarField(G, d.final_state), cfg.params)
    assert d.phi_lambda[-1] == pytest.approx(direct, rel=1e-12)


def test_noise_off_energy():
    cfg = cfg_small(noise=NoiseSpec(scale=0.0), params=RegularizationParams(lam=0.5))
    ens = simulate_ensemble(cfg, [0, 1])
    model = cfg.noise_model()
    rep = energy_balance_check(ens, model, 0.5)
    assert rep["passed"] and min(rep["slack_mean"]) >= 0.0
    assert np.all(dissipation_identity(ens[0]) >= 0)
    assert deterministic_sup_ratio(ens[0]) == pytest.approx(1.0)
    with pytest.raises(ParamError):
        energy_balance_check(ens, model, 0.6)


def test_dissipation_defect_is_first_order():
    base = cfg_small(noise=NoiseSpec(scale=0.0), params=RegularizationParams(lam=0.5))
    a = dissipation_identity(simulate_path(base))[-1]
    b = dissipation_identity(simulate_path(replace(base, dt=base.dt / 2)))[-1]
    assert a > 0 and b > 0
    assert a / b == pytest.approx(2.0, rel=0.3)


def test_energy_balance_with_noise():
    cfg = cfg_small()
    model = cfg.noise_model()
    ens = simulate_ensemble(cfg, range(4))
    fine = simulate_ensemble(replace(cfg, dt=cfg.dt / 2), range(4))
    allow = dt_halving_allowance(ens, fine, model, cfg.params.lam)
    rep = energy_balance_check(ens, model, cfg.params.lam, allow)
    assert rep["passed"] and rep["n_paths"] == 4
    assert len(rep["slack_mean"]) == cfg.output_times.size


def test_moment_constants():
    cfg = cfg_small()
    ens = simulate_ensemble(cfg, range(30))
    cell = fit_moment_constant(ens, label=("a",))
    assert cell.c_hm1 >= 1.0 and cell.c_l2 >= 1.0 and cell.n_paths == 30
    with pytest.raises(ParamError):
        fit_moment_constant(ens[:10])
    chk = moment_bound_check([cell, MomentCell(("b",), 1.5 * cell.c_hm1, cell.c_l2, 1.0, 0.0, 30)])
    assert chk["passed"] and chk["c_hm1_ratio"] == pytest.approx(1.5)
    chk = moment_bound_check([cell, MomentCell(("b",), 3 * cell.c_hm1, cell.c_l2, 1.0, 0.0, 30)])
    assert not chk["passed"]


def test_weak_form_replay_matches_online():
    cfg = cfg_small(store_states=True, store_increments=True)
    d = simulate_path(cfg)
    model = cfg.noise_model()
    stride = cfg.output_stride
    for j in (1, 4):
        res = weak_form_residual(d, cfg, model, j)
        assert np.allclose(res[::stride], d.weak_residuals[:, j - 1], rtol=1e-9, atol=1e-12)
    with pytest.raises(ReplayError):
        weak_form_residual(simulate_path(cfg_small()), cfg, model, 1)
    with pytest.raises(ParamError):
        weak_form_residual(d, cfg, model, 99)


def test_nu_rate_check():
    dnu = [0.1, 0.05, 0.025]
    rep = nu_rate_check(dnu, [3 * v for v in dnu])
    assert rep["alpha"] == pytest.approx(1.0) and rep["C"] == pytest.approx(3.0) and rep["passed"]
    assert not nu_rate_check(dnu, [v ** 0.5 for v in dnu])["passed"]


def test_operator_spot_checks():
    rng = np.random.default_rng(0)
    rep = operator_spot_checks(RegularizationParams(lam=0.25, nu=0.5), G, rng, n_pairs=5)
    assert rep["monotonicity_C"] == 0.0 and rep["coercivity_C"] == 0.0
    assert rep["boundedness_ok"] and rep["hemicontinuity_ok"]
    with pytest.raises(ParamError):
        operator_spot_checks(RegularizationParams(lam=0.25, nu=0.5), G, rng, 1, nu_pair=1.0)


def test_aggregate_and_positivity():
    ens = simulate_ensemble(cfg_small(), range(3))
    rep = aggregate(ens)
    assert rep.n_paths == 3
    assert rep.mean["mass"].shape == ens[0].t.shape
    rows = rep.rows()
    assert rows[0]["t"] == 0.0 and "band_norm_l2_sq" in rows[0]
    pos = positivity_report(ens)
    assert pos["passed"] and pos["n_events"] == 0
    rep.record("x", True, "d")
    assert rep.ledger[-1] == {"criterion": "x", "passed": True, "detail": "d"}


def test_phi_lambda_of_one_and_upper_bound():
    p = RegularizationParams(lam=0.5)
    # J(1) = 1, so j_lam(1) = j(1) = -1
    assert phi_lambda(G.constant(1.0), p) == pytest.approx(-0.75 * G.volume, rel=1e-13)
    x = DatumSpec().build(G)
    v = x.values
    upper = float((v * np.log(v) - v + 0.25 * v ** 2).sum()) * G.cell_volume
    assert phi_lambda(x, p) <= upper


def test_weak_residual_trivial_cases():
    cfg = cfg_small(store_states=True, store_increments=True)
    d = simulate_path(cfg)
    assert np.all(d.weak_residuals[0] == 0.0)
    still = cfg_small(noise=NoiseSpec(scale=0.0), datum=DatumSpec(profile="constant", floor=0.7),
                      store_states=True, store_increments=True)
    d = simulate_path(still)
    for j in (1, 2, 3):
        assert np.abs(weak_form_residual(d, still, still.noise_model(), j)).max() < 1e-12


def test_gradient_integral_equibounded_in_lambda():
    totals = []
    for lam in (0.5, 0.25, 0.1):
        cfg = cfg_small(t_final=0.25, params=RegularizationParams(lam=lam))
        ens = simulate_ensemble(cfg, range(30))
        totals.append(np.mean([path.int_grad_psi[-1] for path in ens]))
    v = DatumSpec().build(G).values
    size = 1.0 + G.cell_volume * (float((v ** 2).sum()) + abs(float((v * np.log(v) - v).sum())))
    c_fit = max(totals) / size
    assert np.all(np.isfinite(totals)) and 0.0 < c_fit < 1.0
    assert max(totals) <= 2.0 * min(totals)
