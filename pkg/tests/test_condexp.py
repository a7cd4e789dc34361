import numpy as np
import pytest
from pydantic import ValidationError
from scipy.integrate import dblquad, quad

from app.approx.bbl import BBLApproximation
from app.approx.dual import DualExpansion
from app.condexp.analytic import (
    ExpAffineSpec, annuity_factor, cond_exp_exp_affine, decay_integral, forward_coefficients,
)
from app.condexp.kernels import Kernel, PolyExpTerm, flatten_iterated, gauss_legendre
from app.condexp.nested import (
    ContinuationFunctional, FunctionalKind, MarkovState, nested_mc, nested_mc_batch,
)
from app.core.errors import InvalidParameterError, KernelError
from app.habit.level import ratio_and_level
from app.market.spd import simulate_paths, spd_moment, time_integral
from app.schemas.params import TimeGrid


def test_gauss_legendre_is_exact_for_polynomials():
    x, w = gauss_legendre(1.0, 4.0, 8)
    assert np.sum(w * x ** 5) == pytest.approx((4.0 ** 6 - 1.0) / 6.0, rel=1e-13)
    x, w = gauss_legendre(np.array([0.0, 2.0]), np.array([1.0, 3.0]), 4)
    assert x.shape == (2, 4)
    assert np.allclose(np.sum(w, axis=-1), [1.0, 1.0])


def test_flatten_with_zero_inner_returns_outer():
    outer = Kernel.exponential(0.7, 0.2)
    flat = flatten_iterated(outer, Kernel.zero())
    z = np.linspace(0.0, 5.0, 11)
    assert np.allclose(flat(z), outer(z), rtol=0, atol=1e-15)


def test_flatten_constant_kernels():
    c1, c2 = 0.3, 1.7
    flat = flatten_iterated(Kernel.constant(c1), Kernel.constant(c2))
    z = np.linspace(0.0, 4.0, 9)
    assert np.allclose(flat(z), c1 * c2 * z + c1, rtol=1e-14, atol=1e-15)


@pytest.mark.parametrize("a, b", [(0.1, 0.0), (0.2, 0.35), (0.0, 0.4), (0.15, 0.15)])
def test_flatten_exponential_kernels_match_quadrature(a, b):
    outer = Kernel.exponential(0.9, a)
    inner = Kernel.exponential(-0.4, b) + Kernel.constant(0.25)
    direct = Kernel.exponential(1.3, 0.05)
    flat = flatten_iterated(outer, inner, direct)
    for z in (0.0, 0.3, 2.0, 7.5):
        tail, _ = quad(lambda y: float(outer(y)), 0.0, z, epsabs=1e-14, epsrel=1e-14)
        expected = float(outer(z) * direct(z) + inner(z) * tail)
        assert abs(float(flat(z)) - expected) < 1e-10


def test_flattened_weight_reproduces_iterated_integral():
    tau = 3.0
    outer = Kernel.exponential(0.8, 0.25)
    inner = Kernel.exponential(0.3, 0.1) + Kernel.constant(-0.2)
    flat = flatten_iterated(outer, inner)
    path = np.cos

    direct, _ = quad(lambda u: float(outer(tau - u)) * path(u), 0.0, tau, epsabs=1e-13)
    nested, _ = dblquad(lambda v, u: float(outer(tau - u) * inner(tau - v)) * path(v), 0.0, tau,
                        lambda u: 0.0, lambda u: u, epsabs=1e-12)
    single, _ = quad(lambda v: float(flat(tau - v)) * path(v), 0.0, tau, epsabs=1e-13)
    assert single == pytest.approx(direct + nested, abs=1e-9)


def test_antiderivative_of_polynomial_exponential_terms():
    kernel = Kernel(terms=(PolyExpTerm(coef=0.5, power=2, rate=0.3), PolyExpTerm(coef=-1.0, power=1, rate=0.0)))
    anti = kernel.antiderivative()
    for z in (0.5, 3.0, 9.0):
        expected, _ = quad(lambda y: float(kernel(y)), 0.0, z, epsabs=1e-14, epsrel=1e-14)
        assert float(anti(z)) == pytest.approx(expected, abs=1e-11)


def test_flatten_rejects_other_kernel_families():
    with pytest.raises(KernelError):
        flatten_iterated(lambda z: z, Kernel.zero())


def test_spec_requires_ordered_times():
    with pytest.raises(ValidationError):
        ExpAffineSpec(t=2.0, s=1.0)


def test_exp_affine_reduces_to_spd_moment(market):
    for t, s in ((0.0, 1.0), (2.0, 7.5)):
        value = cond_exp_exp_affine(ExpAffineSpec(t=t, s=s, b_end=1.0), market)
        assert value == pytest.approx(spd_moment(1.0, s - t, market), rel=1e-12)
        assert value == pytest.approx(np.exp(-market.r * (s - t)), rel=1e-12)


def test_exp_affine_without_randomness_is_exact(market):
    assert cond_exp_exp_affine(ExpAffineSpec(t=1.0, s=3.0, a0=0.37), market) == np.exp(0.37)


def test_exp_affine_matches_simulation(market):
    spec = ExpAffineSpec(t=0.0, s=1.0, b_end=0.9, weight=Kernel.exponential(1.0, 0.1))
    grid = TimeGrid(T=1.0, n_steps=200)
    batch = simulate_paths(market, grid, n_paths=20000, seed=31)
    weighted = time_integral(np.exp(-0.1 * (1.0 - batch.times)) * batch.log_m, grid)
    samples = np.exp(0.9 * batch.log_m[:, -1] + weighted)
    se = samples.std(ddof=1) / np.sqrt(samples.size)
    assert abs(samples.mean() - cond_exp_exp_affine(spec, market)) < 4.0 * se


def test_annuity_factor_examples(market):
    assert annuity_factor(-market.r, 5.0, market) == pytest.approx(5.0)
    assert annuity_factor(0.0, 10.0, market) == pytest.approx(9.5163, abs=1e-4)
    assert annuity_factor(0.0, 0.0, market) == 0.0


def test_annuity_factor_matches_nested_simulation(market):
    functional = ContinuationFunctional(kind=FunctionalKind.SPD_ANNUITY, horizon=10.0, kappa=0.0, inner_dt=0.05)
    estimate, se = nested_mc(MarkovState(t=0.0, m=1.0), functional, 4000, seed=8, params=market)
    assert abs(estimate - annuity_factor(0.0, 10.0, market)) < 4.0 * se + 1e-3


def _bbl_forward_by_exp_affine(model, market, t, s, log_m_t, log_h_t):
    """Flatten log(M_s c'_s) for the BBL law into one exponential-affine spec"""
    approx = BBLApproximation(model=model, market=market, eta=1.3)
    hp, g = model.habit, model.preferences.gamma
    p = -1.0 / g
    tau = s - t
    offset, _ = quad(lambda v: float(np.exp(-hp.kappa * (s - v)) * approx._offset(v)), t, s,
                     epsabs=1e-13, epsrel=1e-13)
    a0 = ((1.0 + p) * log_m_t + approx._offset(s) + hp.beta * offset
          + np.exp(-hp.kappa * tau) * log_h_t + hp.beta * p * log_m_t * float(decay_integral(hp.kappa, tau)))
    spec = ExpAffineSpec(t=t, s=s, a0=float(a0), b_end=1.0 + p, weight=Kernel.exponential(hp.beta * p, hp.kappa))
    return approx, cond_exp_exp_affine(spec, market)


@pytest.mark.parametrize("habit_fixture", ["model", "decaying_habit_model"])
def test_forward_table_matches_general_formula(habit_fixture, request, market):
    model = request.getfixturevalue(habit_fixture)
    t, s, log_m_t, a_t, log_h_t = 2.0, 6.5, -0.4, -1.1, 0.2
    approx, expected = _bbl_forward_by_exp_affine(model, market, t, s, log_m_t, log_h_t)
    coeffs = forward_coefficients(approx.ratio_law(), model.habit, market, t, np.array([s]), 32)
    value = float(np.exp(coeffs.log_moment(np.array([log_m_t]), np.array([a_t]), np.array([log_h_t])))[0, 0])
    assert value == pytest.approx(expected, rel=1e-9)


def test_forward_table_at_zero_lag_is_current_consumption(model, market):
    law = DualExpansion(model=model, market=market, eta=0.8).ratio_law()
    t, log_m, a_t, log_h = 3.0, 0.25, 0.4, -0.1
    coeffs = forward_coefficients(law, model.habit, market, t, np.array([t]), 16)
    value = coeffs.log_moment(np.array([log_m]), np.array([a_t]), np.array([log_h]))[0, 0]
    expected = log_m + law.log_ratio(np.array(t), np.array(log_m), np.array(a_t)) + log_h
    assert value == pytest.approx(float(expected), rel=1e-12)


def _consumption_functional(law, model, kind=FunctionalKind.CONSUMPTION_AT, **kw):
    return ContinuationFunctional(kind=kind, horizon=model.horizon, log_ratio=law.log_ratio,
                                  habit=model.habit, inner_dt=0.02, **kw)


def test_nested_at_zero_lag_returns_current_value(model, market):
    law = BBLApproximation(model=model, market=market, eta=2.0).ratio_law()
    state = MarkovState(t=4.0, m=0.9, a_int=-0.3, log_h=0.15)
    estimate, se = nested_mc(state, _consumption_functional(law, model, s=4.0), 16, seed=1, params=market)
    expected = 0.9 * np.exp(float(law.log_ratio(np.array(4.0), np.log(0.9), -0.3)) + 0.15)
    assert se == 0.0
    assert estimate == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("approx_cls", [BBLApproximation, DualExpansion])
def test_nested_matches_merton_closed_form(approx_cls, no_habit_model, market):
    # without habit, E[int_t^T M_s c'_s ds | F_t] = M_t c'_t F(t)
    eta = 0.9
    law = approx_cls(model=no_habit_model, market=market, eta=eta).ratio_law()
    state = MarkovState(t=3.0, m=1.2, a_int=0.1)
    functional = _consumption_functional(law, no_habit_model, FunctionalKind.CONSUMPTION_ANNUITY, kappa=0.0)
    estimate, se = nested_mc(state, functional, 4000, seed=33, params=market, path_id=1, node=12)
    pref = no_habit_model.preferences
    current = state.m * (eta * np.exp(pref.delta * state.t) * state.m) ** (-1.0 / pref.gamma)
    expected = current * float(DualExpansion(model=no_habit_model, market=market, eta=eta).F(state.t))
    assert abs(estimate - expected) < 4.0 * se + 1e-3 * expected


def test_nested_requires_inner_paths(model, market):
    functional = ContinuationFunctional(kind=FunctionalKind.SPD_ANNUITY, horizon=10.0)
    with pytest.raises(InvalidParameterError):
        nested_mc(MarkovState(t=0.0, m=1.0), functional, 0, seed=1, params=market)


@pytest.mark.parametrize("approx_cls", [BBLApproximation, DualExpansion])
def test_nested_and_analytic_backends_agree(approx_cls, model, market):
    law = approx_cls(model=model, market=market, eta=1.5).ratio_law()
    state = MarkovState(t=2.0, m=0.93, a_int=-0.05, log_h=0.02)
    for kind, extra in ((FunctionalKind.CONSUMPTION_AT, {"s": 5.0}),
                        (FunctionalKind.CONSUMPTION_ANNUITY, {"kappa": model.habit.kappa})):
        functional = _consumption_functional(law, model, kind, **extra)
        estimate, se = nested_mc(state, functional, 4000, seed=12, params=market, path_id=3, node=8)
        if kind == FunctionalKind.CONSUMPTION_AT:
            s = np.array([5.0])
            w = np.ones(1)
        else:
            s, w = gauss_legendre(state.t, model.horizon, 32)
            w = w * np.exp(-model.habit.kappa * (s - state.t))
        coeffs = forward_coefficients(law, model.habit, market, state.t, s, 32)
        analytic = float(np.sum(w * np.exp(coeffs.log_moment(
            np.array([np.log(state.m)]), np.array([state.a_int]), np.array([state.log_h])))[0]))
        assert abs(estimate - analytic) < 4.0 * se


def test_tower_property(model, market):
    law = BBLApproximation(model=model, market=market, eta=1.0).ratio_law()
    grid = TimeGrid(T=10.0, n_steps=40)
    outer = simulate_paths(market, grid, n_paths=300, seed=77)
    k = 4
    log_chat = law.log_ratio(grid.times, outer.log_m, outer.a_int)
    log_h, _ = ratio_and_level(log_chat, model.habit, grid)
    states = [MarkovState(t=grid.times[k], m=float(np.exp(outer.log_m[i, k])),
                          a_int=outer.a_int[i, k], log_h=log_h[i, k]) for i in range(outer.n_paths)]
    functional = _consumption_functional(law, model, s=6.0)
    estimates, _ = nested_mc_batch(states, functional, 64, 5, market, list(range(300)), [k] * 300, threads=4)
    coeffs = forward_coefficients(law, model.habit, market, 0.0, np.array([6.0]), 32)
    unconditional = float(np.exp(coeffs.log_moment(np.zeros(1), np.zeros(1), np.zeros(1)))[0, 0])
    se = estimates.std(ddof=1) / np.sqrt(estimates.size)
    assert abs(estimates.mean() - unconditional) < 4.0 * se + 2e-3 * unconditional


def test_nested_streams_are_keyed_by_node(market):
    functional = ContinuationFunctional(kind=FunctionalKind.SPD_ANNUITY, horizon=5.0, inner_dt=0.1)
    state = MarkovState(t=1.0, m=1.1)
    first = nested_mc(state, functional, 50, seed=4, params=market, path_id=2, node=3)
    again = nested_mc(state, functional, 50, seed=4, params=market, path_id=2, node=3)
    other = nested_mc(state, functional, 50, seed=4, params=market, path_id=2, node=4)
    assert first == again
    assert first != other


def test_batch_is_independent_of_threads(market):
    functional = ContinuationFunctional(kind=FunctionalKind.SPD_ANNUITY, horizon=5.0, inner_dt=0.1)
    states = [MarkovState(t=1.0, m=m) for m in (0.8, 1.0, 1.2, 1.4)]
    one = nested_mc_batch(states, functional, 32, 9, market, [0, 1, 2, 3], [1, 1, 1, 1], threads=1)
    many = nested_mc_batch(states, functional, 32, 9, market, [0, 1, 2, 3], [1, 1, 1, 1], threads=3)
    assert np.array_equal(one[0], many[0])
