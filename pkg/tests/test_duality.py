import numpy as np
import pytest
from scipy.integrate import quad

import app.duality.controls as controls_module
from app.approx.calibration import ApproxKind, calibrate_eta
from app.core.errors import InfeasibleDualError, InvalidParameterError
from app.duality.controls import build_dual_controls, forward_weight
from app.duality.values import (
    dual_integrals, dual_value, duality_gap, merton_value, paired_gap_se, primal_integrals,
    primal_value, select_smallest_bound, welfare_loss, welfare_loss_by_root,
)
from app.market.spd import simulate_paths, time_integral
from app.preferences.utility import conjugate_v1, conjugate_v2
from app.schemas.params import TimeGrid
from app.schemas.response import CandidateBound


@pytest.fixture
def merton_pair(no_habit_model, market, small_batch):
    calibrated = calibrate_eta(ApproxKind.BBL, 20.0, small_batch, no_habit_model, market)
    controls = build_dual_controls(calibrated, 20.0, no_habit_model, market)
    return calibrated, controls


@pytest.fixture
def baseline_bbl(model, market, small_batch):
    return calibrate_eta(ApproxKind.BBL, 20.0, small_batch, model, market)


def test_unit_ratio_has_known_value(model, small_batch):
    zeros = np.zeros_like(small_batch.log_m)
    J, se = primal_value(small_batch.with_consumption(zeros, zeros), model)
    delta, gamma, T = model.preferences.delta, model.preferences.gamma, model.horizon
    assert se == 0.0
    assert J == pytest.approx(-np.expm1(-delta * T) / delta / (1.0 - gamma), rel=1e-4)


def test_primal_value_needs_consumption(model, small_batch):
    with pytest.raises(InvalidParameterError):
        primal_integrals(small_batch, model)


def test_merton_pair_closes_the_gap(merton_pair, no_habit_model):
    calibrated, controls = merton_pair
    J, _ = primal_value(calibrated.batch, no_habit_model)
    V, _ = dual_value(controls, 20.0, calibrated.batch, no_habit_model)
    assert controls.eta_prime == pytest.approx(calibrated.eta, rel=1e-8)
    assert abs(welfare_loss(duality_gap(J, V), controls.eta_prime, 20.0)) < 1e-6


def test_merton_primal_matches_closed_form(merton_pair, no_habit_model, market):
    calibrated, _ = merton_pair
    J, se = primal_value(calibrated.batch, no_habit_model)
    assert abs(J - merton_value(calibrated.eta, no_habit_model, market)) < 4.0 * se


def test_merton_control_is_scaled_state_price(merton_pair, small_batch):
    calibrated, controls = merton_pair
    expected = calibrated.eta * np.exp(small_batch.log_m + calibrated.batch.log_c)
    assert np.allclose(controls.psi, expected, rtol=1e-8, atol=0.0)


@pytest.mark.parametrize("kind", [ApproxKind.BBL, ApproxKind.DUAL])
def test_weak_duality_on_baseline(kind, model, market, small_batch):
    calibrated = calibrate_eta(kind, 20.0, small_batch, model, market)
    controls = build_dual_controls(calibrated, 20.0, model, market)
    primal = primal_integrals(calibrated.batch, model)
    dual = dual_integrals(controls, 20.0, calibrated.batch, model)
    J, se_J = primal_value(calibrated.batch, model)
    V, se_V = dual_value(controls, 20.0, calibrated.batch, model)
    assert V - J >= -3.0 * (se_J + se_V)
    assert paired_gap_se(primal, dual) < se_J + se_V
    assert abs(controls.eta_residual) < 1e-3


def test_merton_gap_has_no_spread_once_budgets_are_pinned(merton_pair, no_habit_model):
    calibrated, controls = merton_pair
    primal = primal_integrals(calibrated.batch, no_habit_model)
    dual = dual_integrals(controls, 20.0, calibrated.batch, no_habit_model)
    raw = paired_gap_se(primal, dual)
    pinned = paired_gap_se(primal, dual, [calibrated.spend, controls.spend])
    assert raw > 0.0
    assert pinned < 1e-8 * raw
    assert np.allclose(controls.spend, calibrated.spend, rtol=1e-8)


def test_pinned_budget_leaves_unrelated_noise(rng):
    budget_paths = rng.normal(20.0, 3.0, size=4000)
    noise = rng.normal(0.0, 1.0, size=4000)
    primal = np.zeros(4000)
    dual = 0.5 * (20.0 - budget_paths) + noise
    se = paired_gap_se(primal, dual, [budget_paths])
    assert se == pytest.approx(1.0 / np.sqrt(4000), rel=0.05)
    assert se < paired_gap_se(primal, dual)


def test_control_at_horizon_is_current_value(baseline_bbl, model, market, small_batch):
    controls = build_dual_controls(baseline_bbl, 20.0, model, market)
    expected = controls.eta_prime * np.exp(small_batch.log_m[:, -1] + baseline_bbl.batch.log_c[:, -1])
    assert np.allclose(controls.psi[:, -1], expected, rtol=1e-12, atol=0.0)
    assert np.all(controls.forward[:, -1] == 0.0)


def test_v2_argument_is_generated_consumption(baseline_bbl, model, market):
    controls = build_dual_controls(baseline_bbl, 20.0, model, market)
    assert np.all(controls.psi > 0.0)
    assert np.allclose(controls.v2_argument, np.exp(baseline_bbl.batch.log_c), rtol=1e-9, atol=0.0)


def test_forward_weight_swaps_the_habit_integral(decaying_habit_model):
    hp = decaying_habit_model.habit
    for lag in (0.0, 0.7, 4.0, 10.0):
        inner, _ = quad(lambda x: np.exp(-hp.alpha * x - hp.kappa * (lag - x)), 0.0, lag, epsabs=1e-14)
        assert forward_weight(hp, lag) == pytest.approx(np.exp(-hp.alpha * lag) + hp.beta * inner, rel=1e-12)


def test_dual_value_for_state_price_control(merton_pair, no_habit_model, small_batch):
    _, controls = merton_pair
    eta = controls.eta_prime
    scaled = controls.model_copy(update={
        "psi": eta * np.exp(small_batch.log_m),
        "v2_argument": np.ones_like(small_batch.log_m),
    })
    integrand = -conjugate_v1(small_batch.times, eta * small_batch.m, no_habit_model.preferences) \
        - eta * small_batch.m
    expected = time_integral(integrand, small_batch.grid) + eta * 20.0
    assert np.allclose(dual_integrals(scaled, 20.0, small_batch, no_habit_model), expected, rtol=1e-13)


def test_doubling_eta_with_fixed_control(baseline_bbl, model, market, small_batch):
    controls = build_dual_controls(baseline_bbl, 20.0, model, market)
    eta = controls.eta_prime
    doubled = controls.model_copy(update={"eta_prime": 2.0 * eta, "v2_argument": controls.v2_argument / 2.0})
    V, _ = dual_value(controls, 20.0, small_batch, model)
    V2x, _ = dual_value(doubled, 20.0, small_batch, model)
    m = small_batch.m
    change = time_integral(
        eta * m * conjugate_v2(controls.v2_argument) - 2.0 * eta * m * conjugate_v2(controls.v2_argument / 2.0),
        small_batch.grid,
    )
    assert V2x - V == pytest.approx(float(np.mean(change)) + eta * 20.0, rel=1e-9)


def test_minimizing_rule_gives_smaller_bound(baseline_bbl, model, market, small_batch):
    budget_rule = build_dual_controls(baseline_bbl, 20.0, model, market, eta_rule="budget")
    minimizing = build_dual_controls(baseline_bbl, 20.0, model, market, eta_rule="minimize")
    V_budget, _ = dual_value(budget_rule, 20.0, small_batch, model)
    V_min, _ = dual_value(minimizing, 20.0, small_batch, model)
    assert V_min <= V_budget + 1e-12 * abs(V_budget)
    assert np.allclose(minimizing.base, budget_rule.base, rtol=1e-12)


def test_infeasible_control_reports_fraction(baseline_bbl, model, market, monkeypatch):
    def broken_terms(law, batch, log_h, hp, market, n_nodes, threads):
        annuity = np.zeros_like(batch.log_m)
        forward = np.zeros_like(batch.log_m)
        forward[: batch.n_paths // 2] = 1e6
        return annuity, forward

    monkeypatch.setattr(controls_module, "_analytic_terms", broken_terms)
    with pytest.raises(InfeasibleDualError) as info:
        build_dual_controls(baseline_bbl, 20.0, model, market)
    assert info.value.fraction == pytest.approx(0.5)
    assert info.value.exit_code == 3


def test_nested_backend_tracks_analytic(model, market):
    batch = simulate_paths(market, TimeGrid(T=10.0, n_steps=10), n_paths=20, seed=5)
    calibrated = calibrate_eta(ApproxKind.BBL, 20.0, batch, model, market)
    analytic = build_dual_controls(calibrated, 20.0, model, market)
    nested = build_dual_controls(calibrated, 20.0, model, market, backend="nested",
                                 inner_paths=256, seed=5, threads=2)
    assert nested.backend == "nested"
    assert np.all(nested.psi > 0.0)
    assert np.allclose(nested.base, analytic.base, rtol=0.1)


def test_welfare_loss_examples():
    assert welfare_loss(0.0, 1.0, 20.0) == 0.0
    assert welfare_loss(0.04, 1.0, 20.0) == pytest.approx(0.002)
    with pytest.raises(InvalidParameterError):
        welfare_loss(0.04, 0.0, 20.0)
    with pytest.raises(InvalidParameterError):
        welfare_loss_by_root(-1.0, -0.9, -2.0, 20.0)


@pytest.mark.parametrize("J, V, eta_prime, x0", [
    (-5.0, -4.96, 1.0, 20.0),
    (-0.031, -0.0309, 0.0021, 20.0),
    (-2.0, -2.0, 0.5, 10.0),
    (-1.0, -1.3, 0.05, 30.0),
])
def test_closed_form_matches_root(J, V, eta_prime, x0):
    closed = welfare_loss(duality_gap(J, V), eta_prime, x0)
    assert welfare_loss_by_root(J, V, eta_prime, x0) == pytest.approx(closed, abs=1e-10)


def test_select_smallest_bound():
    bounds = [
        CandidateBound(approximation="bbl", V=-0.0308, se_V=1e-4, eta_prime=0.002, eta_residual=0.0),
        CandidateBound(approximation="dual", V=-0.0310, se_V=1e-4, eta_prime=0.002, eta_residual=0.0),
    ]
    assert select_smallest_bound(bounds).approximation == "dual"
    assert select_smallest_bound(bounds[:1]).approximation == "bbl"
    with pytest.raises(InvalidParameterError):
        select_smallest_bound([])


@pytest.mark.parametrize("gamma, x0", [(1.6, 20.0), (20.0, 40.0)])
def test_dual_pair_at_long_horizon_and_strong_habit(gamma, x0, model, market):
    params = model.model_copy(update={
        "preferences": model.preferences.model_copy(update={"gamma": gamma}),
        "habit": model.habit.model_copy(update={"alpha": 0.2, "beta": 0.2}),
        "horizon": 20.0,
    })
    batch = simulate_paths(market, TimeGrid(T=20.0, n_steps=40), n_paths=500, seed=23)
    calibrated = calibrate_eta(ApproxKind.DUAL, x0, batch, params, market)
    assert abs(calibrated.residual) < 1e-3
    controls = build_dual_controls(calibrated, x0, params, market)
    J, se_J = primal_value(calibrated.batch, params)
    V, se_V = dual_value(controls, x0, calibrated.batch, params)
    assert V - J >= -3.0 * (se_J + se_V)
    assert np.isfinite(welfare_loss(V - J, controls.eta_prime, x0))
