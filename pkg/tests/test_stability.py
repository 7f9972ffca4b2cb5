import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from dhmm import graph, hmm, mixing, stability
from dhmm.errors import AssumptionError, ParameterError


def constants(**kw):
    base = dict(C=1.0, beta=2.0, delta=2 * (math.e + 1), eta=6 * (math.e + 1), lambda_inf=math.e,
                lambda_sup=math.e, mu_sup=0.0, gamma=1.0, rho=1 / math.e, tau=1.0, T=0, N=1, S=1,
                eps_max=0.1)
    base.update(kw)
    return stability.StabilityConstants(**base)


@pytest.fixture(scope="module")
def small_constants():
    model = hmm.small_model(8).normalized()
    rep = mixing.spectrum_report(mixing.max_degree_chain(graph.sample_connected_rgg(8, 0.5, 0)))
    return stability.make_constants(model, rep, 1.0, 6.9, 10)


def test_probability_floor_example():
    assert stability.probability_floor(1, 2, 1) == pytest.approx(1 - 0.5 * math.exp(-2), abs=1e-12)
    assert stability.probability_floor(1, 2, 1) == pytest.approx(0.93233, abs=1e-5)
    for C, N, T in [(1, 2, 0), (1.5, 3, 10), (1, 120, 20)]:
        assert 0 < stability.probability_floor(C, N, T) <= 1


def test_event_check_on_zero_observations():
    obs = [[np.zeros(2), np.zeros(2)] for _ in range(4)]
    ev = stability.trajectory_event_check(obs, 1.0, 2.0, 3, 4)
    assert ev.holds and ev.margin == pytest.approx(2.0 * 4 * (1 + math.log(4)))
    with pytest.raises(ParameterError):
        stability.trajectory_event_check(obs, 0.5, 2.0, 3, 4)
    with pytest.raises(ParameterError):
        stability.trajectory_event_check(obs, 1.0, 1.0, 3, 4)


def test_event_check_sees_large_energy():
    obs = [[np.zeros(1)], [np.array([10.0])]]
    ev = stability.trajectory_event_check(obs, 1.0, 2.0, 1, 1)
    assert not ev.holds and ev.sup_energy == 100.0


def test_delta_and_eta_examples():
    d = stability.delta_const(2.0, 0.0, math.e, math.e)
    assert d == pytest.approx(7.43656, abs=1e-5)
    assert stability.eta_const(d, math.e) == pytest.approx(22.30969, abs=1e-5)
    assert stability.delta_variant(2.0, 0.0, math.e, math.e) == pytest.approx(2 * (1 / math.e + 1))
    with pytest.raises(AssumptionError):
        stability.eta_const(d, 1.0)


def test_growth_bound_collapses_to_delta():
    k = constants()
    assert stability.growth_bound(k) == pytest.approx(k.delta)


def test_e_lower_bound_example():
    k = constants(beta=1.0 + 1e-15)
    want = math.exp(-0.5) * math.exp(-1.0 / (2 * math.e))
    got = stability.log_e_lower_bound(1.0, 1.0, 1, 0, 0.0, math.e, math.e)
    assert math.exp(got) == pytest.approx(want)
    assert k.T == 0


def test_e_lower_bound_decreases_in_T():
    vals = [stability.log_e_lower_bound(3.0, 1.0, 16, T, 4.0, math.e, 7.0) for T in range(0, 60)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_solve_min_n_examples():
    assert stability.solve_min_n(1.0, 1.0, 5.0, 2) == 7
    assert stability.solve_min_n(3.0, 0.5, -100.0, 9) == 9
    with pytest.raises(ParameterError):
        stability.solve_min_n(0.0, 1.0, 1.0, 2)
    with pytest.raises(ParameterError):
        stability.solve_min_n(1.0, 1.0, 1.0, 1)


@given(tau=st.floats(0.01, 50.0), gamma=st.floats(0.01, 1.0), B=st.floats(-20.0, 500.0),
       n_floor=st.integers(2, 40))
def test_solve_min_n_minimal(tau, gamma, B, n_floor):
    n = stability.solve_min_n(tau, gamma, B, n_floor)
    ok = lambda m: m - tau * math.log(gamma * m) >= B
    assert n >= n_floor and ok(n)
    assert not any(ok(m) for m in range(n_floor, n))


def test_iterate_floor_degenerate_tau():
    k = constants(tau=1e-9, eps_max=1.4)
    assert stability.required_n_iterate_floor(k) == k.n_floor == 4


def test_iterate_floor_resubstitution(small_constants):
    k = small_constants
    n = stability.required_n_iterate_floor(k)
    rhs = stability.rhs_iterate_floor(k)
    assert n - k.tau * math.log(k.gamma * n) >= rhs
    assert n == k.n_floor or (n - 1) - k.tau * math.log(k.gamma * (n - 1)) < rhs
    with pytest.raises(AssumptionError):
        stability.rhs_iterate_floor(replace(k, lambda_inf=0.9))


def test_iterate_floor_monotone_in_T(small_constants):
    ns = [stability.required_n_iterate_floor(replace(small_constants, T=T)) for T in range(0, 200, 7)]
    assert all(b >= a for a, b in zip(ns, ns[1:]))


def test_unnormalized_example():
    k = constants(eta=0.5 * math.exp(5))
    assert stability.rhs_unnormalized(k, 0.5) == pytest.approx(5.0)
    assert stability.required_n_unnormalized(k, 0.5) == 7
    for bad in (0.0, 1.0, 1.5):
        with pytest.raises(ParameterError):
            stability.required_n_unnormalized(k, bad)


def test_unnormalized_accuracy_shift(small_constants):
    k = small_constants
    diff = stability.rhs_unnormalized(k, 0.01) - stability.rhs_unnormalized(k, 1 - 1e-12)
    assert diff == pytest.approx(k.tau * math.log(100.0), rel=1e-9)
    assert stability.required_n_unnormalized(k, 0.01) >= stability.required_n_iterate_floor(k)


def test_posterior_m_shift(small_constants):
    k = small_constants
    n0 = stability.required_n_posterior(k, 0.5, 0.0)
    n5 = stability.required_n_posterior(k, 0.5, 5.0)
    extra = k.tau * math.log(n5 / n0)
    assert 5 * k.tau - 1 <= n5 - n0 <= 5 * k.tau + extra + 1


def test_posterior_scaling_in_T(small_constants):
    for T in (10, 20, 40):
        a = stability.required_n_posterior(replace(small_constants, T=T), 1.0, 0.0)
        b = stability.required_n_posterior(replace(small_constants, T=2 * T), 1.0, 0.0)
        assert 1.8 <= b / a <= 2.6


def test_posterior_hypotheses(small_constants):
    with pytest.raises(ParameterError):
        stability.posterior_constants(replace(small_constants, T=0))
    with pytest.raises(ParameterError):
        stability.posterior_constants(replace(small_constants, S=1))
    with pytest.raises(AssumptionError):
        stability.posterior_constants(replace(small_constants, T=1))
    with pytest.raises(ParameterError):
        stability.rhs_posterior(small_constants, 1.5)
    with pytest.raises(ParameterError):
        stability.rhs_posterior(small_constants, 0.5, -1.0)


def test_posterior_chain_inequalities(small_constants):
    k = small_constants
    pc = stability.posterior_constants(k)
    T = k.T
    assert (T + 1) * (1 + math.log(T + 1)) <= pc.c2 * T * math.log(T)
    for e in (1.0, 0.1, 1e-6):
        lhs = math.log(2 * pc.c2 * k.eta * k.S ** 1.5 * k.C * math.log(T) / e)
        assert lhs <= pc.c2_tilde * math.log(k.C * k.S * T / e)
    assert pc.c == pytest.approx(pc.c1 * pc.c2 * math.log(k.lambda_sup) + pc.c2_tilde)


def test_telescoping_examples():
    rng = np.random.default_rng(0)
    A = [rng.normal(size=(3, 3)) for _ in range(4)]
    lhs, rhs = stability.telescoping_sides(A, A)
    assert lhs == 0.0 and rhs == 0.0
    B = rng.normal(size=(3, 3))
    lhs, rhs = stability.telescoping_sides([A[0]], [B])
    assert lhs == pytest.approx(rhs)
    with pytest.raises(ParameterError):
        stability.telescoping_check([np.eye(2)], [np.eye(3)])
    with pytest.raises(ParameterError):
        stability.telescoping_check([np.eye(2)], [np.eye(2), np.eye(2)])


@given(seed=st.integers(0, 10 ** 6))
def test_telescoping_random(seed):
    rng = np.random.default_rng(seed)
    d, m = int(rng.integers(1, 6)), int(rng.integers(1, 7))
    A = [rng.normal(size=(d, d)) for _ in range(m)]
    B = [a + rng.normal(scale=rng.choice([1e-8, 1e-3, 1.0]), size=(d, d)) for a in A]
    assert stability.telescoping_check(A, B)


def test_make_constants(small_constants):
    k = small_constants
    assert k.delta == pytest.approx(stability.delta_const(k.beta, k.mu_sup, k.lambda_inf, k.lambda_sup))
    assert k.eta == pytest.approx(k.delta * max(2 / math.log(k.lambda_inf), 3))
    assert k.n_floor == max(2, math.floor(2 * k.eps_max + 2))
    doc = k.to_dict()
    assert doc["probability_floor"] == stability.probability_floor(k.C, k.N, k.T)
    model = hmm.small_model(8)
    rep = mixing.spectrum_report(mixing.max_degree_chain(graph.sample_connected_rgg(8, 0.5, 0)))
    for bad in (dict(C=0.5), dict(beta=1.0), dict(T=-1)):
        args = dict(C=1.0, beta=2.0, T=5) | bad
        with pytest.raises(ParameterError):
            stability.make_constants(model, rep, **args)


def test_calibration_picks_smallest_grid_value():
    model = hmm.small_model(8).normalized()
    cal = stability.calibrate_beta(model, 10, 1.0, range(300))
    assert cal["frequency"] >= cal["floor"]
    i = stability.BETA_GRID.index(cal["beta"])
    if i:
        sups = stability.sup_energies(model, 10, range(300))
        base = model.N * (1 + math.log(11))
        assert np.mean(sups < stability.BETA_GRID[i - 1] * base) < cal["floor"]
    assert stability.BETA_GRID[-1] == 8.0
    with pytest.raises(AssumptionError):
        stability.calibrate_beta(model, 5, 1.0, range(50), grid=(1.01,))


@pytest.mark.slow
def test_event_frequency_on_preset():
    model = hmm.asilomar_v()
    T = 20
    cal = stability.calibrate_beta(model, T, 1.0, range(10_000, 10_300))
    floor = stability.probability_floor(1.0, model.N, T)
    seeds = range(300)
    hits = np.mean(stability.sup_energies(model, T, seeds) < stability.energy_envelope(cal["beta"], 1.0, model.N, T))
    sigma = math.sqrt(floor * (1 - floor) / len(seeds))
    assert hits >= floor - 3 * sigma


def test_verify_bounds_report_shape():
    model = hmm.small_model(4).normalized()
    w = mixing.max_degree_chain(graph.sample_connected_rgg(4, 0.8, 0))
    k = stability.make_constants(model, mixing.spectrum_report(w), 1.0, 8.0, 3)
    rep = stability.verify_bounds(model, w, k, list(range(5)), ms=(0.0,))
    assert set(rep["bounds"]) == {"growth", "iterate_floor", "e_lower_bound", "unnormalized", "posterior_m0"}
    assert rep["event"]["count"] <= 5 and "observed_min" in rep["bounds"]["iterate_floor"]
