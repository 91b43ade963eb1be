import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from entroflow.errors import SolverError
from entroflow.model_functions import (
    TabulatedInverse, invert_beta, make_custom_model, make_tanh_model, make_traffic_model,
    quadrature_Q, quadrature_Qprime, traffic_beta, traffic_q,
)

import oracles

R_TRAFFIC = 180.0 / 31.0
B70 = 40.0 / 70.0
B102 = 8.0 / 102.0


# --- tanh bundle -------------------------------------------------------------


def test_tanh_kappa_value(tanh1):
    # c (rho-1)^2 / (R-rho) at 1.4 with c = 1, R = 2 is 0.16 / 0.6
    assert tanh1.kappa(1.4) == pytest.approx(0.16 / 0.6, rel=1e-15)


@pytest.mark.parametrize("rho", [0.0, 0.3, 1.0])
def test_tanh_vanishes_below_one(tanh1, rho):
    assert tanh1.kappa(rho) == 0.0
    assert tanh1.Q(rho) == 0.0
    assert tanh1.Qprime(rho) == 0.0


def test_tanh_Q_matches_hand_closed_form():
    for c, R in [(1.0, 2.0), (15.0, 2.0), (3.0, 5.0)]:
        mf = make_tanh_model(c, R)
        for rho in np.linspace(1.0, R - 0.05, 37):
            assert mf.Q(rho) == pytest.approx(oracles.Q_tanh_closed(rho, c, R), rel=1e-12, abs=1e-15)


def test_tanh_Q_value_at_1p4(tanh1):
    assert tanh1.Q(1.4) == pytest.approx(0.0028379590737389, rel=1e-12)


@pytest.mark.parametrize("make,kap", [
    (lambda: make_tanh_model(5.0, 2.0), lambda r: oracles.kappa_tanh(r, 5.0, 2.0)),
    (lambda: make_traffic_model(40.0, R_TRAFFIC, B70), lambda r: oracles.kappa_traffic(r, 40.0, R_TRAFFIC)),
])
def test_potentials_match_quadrature(make, kap):
    mf = make()
    for rho in np.concatenate([1.0 + np.logspace(-6, -1, 8), np.linspace(1.1, mf.R - 0.01, 20)]):
        assert mf.Qprime(rho) == pytest.approx(oracles.Qprime_quad(kap, rho), rel=1e-10, abs=1e-18)
        assert mf.Q(rho) == pytest.approx(oracles.Q_quad(kap, rho), rel=1e-10, abs=1e-22)


def test_vectorized_matches_scalar(tanh1):
    rho = np.array([0.0, 0.5, 1.0, 1.01, 1.2, 1.4, 1.9])
    out = tanh1.Q(rho)
    assert out.shape == rho.shape
    for r, o in zip(rho, out):
        assert o == tanh1.Q(float(r))
    assert isinstance(tanh1.Q(1.2), float)


def test_tanh_rejects_small_b():
    with pytest.raises(ValueError):
        make_tanh_model(1.0, 2.0, 0.5)


def test_density_at_R_rejected(tanh1):
    with pytest.raises(ValueError):
        tanh1.kappa(2.0)
    with pytest.raises(ValueError):
        tanh1.Q(np.array([1.0, 2.5]))


@pytest.mark.parametrize("args", [(0.0, 2.0, 1.0), (1.0, 1.0, 1.0), (1.0, 2.0, 0.0)])
def test_bad_parameters(args):
    with pytest.raises(ValueError):
        make_traffic_model(*args)


def test_tanh_H_is_log_cosh(tanh1):
    s = np.linspace(-30, 30, 13)
    ref = [math.log(math.cosh(v)) for v in s]
    np.testing.assert_allclose(tanh1.H(s), ref, rtol=1e-14, atol=1e-15)


def test_kappa_max_monotone_bundle(tanh1):
    assert tanh1.kappa_max(1.4) == pytest.approx(tanh1.kappa(1.4))
    assert tanh1.kappa_max(0.8) == 0.0


# --- traffic bundle ----------------------------------------------------------


def test_traffic_beta_value_b1():
    # b = 1: beta(1/2) = (1/2 * 2 / (1.5 * 0.5)) + ln 1.5 - ln 0.5 = 4/3 + ln 3
    assert traffic_beta(0.5, 1.0) == pytest.approx(4.0 / 3.0 + math.log(3.0), rel=1e-14)


@pytest.mark.parametrize("b", [B70, B102, 1.0, 3.0])
def test_traffic_beta_matches_independent_formula(b):
    for w in np.linspace(-0.9, 0.9 * b, 25):
        assert traffic_beta(w, b) == pytest.approx(oracles.beta_traffic(w, b), rel=1e-13, abs=1e-15)


@pytest.mark.parametrize("b", [B70, B102])
def test_traffic_q_is_beta_derivative(b):
    w = np.linspace(-0.8, 0.8 * b, 21)
    h = 1e-6
    fd = (traffic_beta(w + h, b) - traffic_beta(w - h, b)) / (2 * h)
    np.testing.assert_allclose(traffic_q(w, b), fd, rtol=1e-7)


@pytest.mark.parametrize("b", [B70, B102])
def test_h_prime_sup_matches_dense_search(b):
    mf = make_traffic_model(40.0, R_TRAFFIC, b)
    w = np.linspace(-1 + 1e-6, b - 1e-6, 400001)
    assert mf.h_prime_sup == pytest.approx(1.0 / traffic_q(w, b).min(), rel=1e-8)


def test_h_prime_sup_b70_value():
    # 1 / min q for b = 4/7
    assert make_traffic_model(40.0, R_TRAFFIC, B70).h_prime_sup == pytest.approx(0.25237, abs=5e-6)


@pytest.mark.parametrize("b", [B70, B102])
def test_traffic_h_matches_brentq(b):
    mf = make_traffic_model(40.0, R_TRAFFIC, b)
    for s in [-200.0, -7.5, -1.0, -1e-3, 1e-9, 0.2, 3.0, 50.0, 1e4]:
        assert mf.h(s) == pytest.approx(oracles.h_traffic_brentq(s, b), rel=1e-11, abs=1e-14)


def test_traffic_H_matches_quadrature_of_h():
    from scipy import integrate

    mf = make_traffic_model(40.0, R_TRAFFIC, B70)
    for s in [-5.0, -0.3, 0.7, 4.0]:
        ref = integrate.quad(lambda u: mf.h(u), 0.0, s, epsabs=1e-13)[0]
        assert mf.H(s) == pytest.approx(ref, rel=1e-9)


def test_traffic_mu_and_kappa(tanh1):
    mf = make_traffic_model(40.0, R_TRAFFIC, B70)
    rho = 1.7
    mu = 40.0 * 0.7**2 / (R_TRAFFIC - 1.7)
    assert mf.mu(rho) == pytest.approx(mu, rel=1e-14)
    assert mf.kappa(rho) == pytest.approx(mu / rho**2, rel=1e-14)


@settings(max_examples=200, deadline=None)
@given(st.floats(-30.0, 30.0))
def test_h_round_trip_property(s):
    mf = make_traffic_model(40.0, R_TRAFFIC, B70)
    w = mf.h(s)
    assert -1.0 < w < B70
    assert traffic_beta(w, B70) == pytest.approx(s, rel=1e-10, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_h_increasing(s1, s2):
    mf = make_traffic_model(40.0, R_TRAFFIC, B102)
    if s1 < s2:
        assert mf.h(s1) <= mf.h(s2)


def test_h_zero_is_zero():
    mf = make_traffic_model(40.0, R_TRAFFIC, B70)
    assert mf.h(0.0) == 0.0
    assert np.all(mf.h(np.zeros(5)) == 0.0)


def test_tabulated_inverse_agrees_with_robust_solver():
    beta = lambda w: traffic_beta(w, B102)  # noqa: E731
    dbeta = lambda w: traffic_q(w, B102)  # noqa: E731
    inv = TabulatedInverse(beta, dbeta, B102)
    s = np.concatenate([-np.logspace(-10, 8, 60), np.logspace(-10, 8, 60)])
    np.testing.assert_allclose(inv(s), invert_beta(beta, s, B102, dbeta=dbeta), rtol=1e-11, atol=1e-14)


def test_invert_beta_bisection_only():
    w = invert_beta(lambda v: traffic_beta(v, 1.0), np.array([0.5, -2.0]), 1.0)
    np.testing.assert_allclose(traffic_beta(w, 1.0), [0.5, -2.0], rtol=1e-11)


def test_invert_beta_iteration_cap():
    with pytest.raises(SolverError):
        invert_beta(lambda v: traffic_beta(v, 1.0), np.array([1e6]), 1.0, max_iter=1)


def test_invert_beta_clamps_beyond_range():
    # a bounded map cannot reach s; the clamped endpoint comes back
    w = invert_beta(np.tanh, np.array([5.0]), 1.0)
    assert w[0] == pytest.approx(1.0, abs=1e-12)


def test_invert_beta_rejects_nonfinite():
    with pytest.raises(SolverError):
        invert_beta(np.tanh, np.array([np.nan]), 1.0)


# --- invariants --------------------------------------------------------------


@settings(max_examples=200, deadline=None)
@given(st.floats(0.0, 1.99), st.floats(0.0, 1.99))
def test_Qprime_nondecreasing_and_Q_nonnegative(r1, r2):
    mf = make_tanh_model(3.0, 2.0)
    lo, hi = min(r1, r2), max(r1, r2)
    assert mf.Qprime(lo) <= mf.Qprime(hi)
    assert mf.Q(lo) >= 0.0


@settings(max_examples=100, deadline=None)
@given(st.floats(1.001, 1.95))
def test_Q_second_derivative_is_kappa(rho):
    mf = make_tanh_model(2.0, 2.0)
    h = 1e-5
    d2 = (mf.Q(rho + h) - 2 * mf.Q(rho) + mf.Q(rho - h)) / h**2
    assert d2 == pytest.approx(mf.kappa(rho), rel=1e-3, abs=1e-4)
    d1 = (mf.Q(rho + h) - mf.Q(rho - h)) / (2 * h)
    assert d1 == pytest.approx(mf.Qprime(rho), rel=1e-6, abs=1e-10)


def test_quadrature_helpers(tanh1):
    k = lambda r: oracles.kappa_tanh(r, 1.0, 2.0)  # noqa: E731
    assert quadrature_Q(k, 1.4) == pytest.approx(tanh1.Q(1.4), rel=1e-10)
    assert quadrature_Qprime(k, 1.4) == pytest.approx(tanh1.Qprime(1.4), rel=1e-10)
    assert quadrature_Q(k, 0.7) == 0.0


def test_custom_model_reproduces_tanh(tanh1):
    mf = make_custom_model(np.tanh, lambda r: oracles.kappa_tanh(r, 1.0, 2.0), c=1.0, R=2.0, b=1.0, h_prime_sup=1.0)
    for rho in [0.5, 1.05, 1.3, 1.8]:
        assert mf.Q(rho) == pytest.approx(tanh1.Q(rho), rel=1e-9, abs=1e-15)
        assert mf.Qprime(rho) == pytest.approx(tanh1.Qprime(rho), rel=1e-9, abs=1e-15)
    assert mf.H(2.0) == pytest.approx(tanh1.H(2.0), rel=1e-9)
    assert mf.kappa_max(1.4) == pytest.approx(tanh1.kappa(1.4), rel=1e-6)


def test_describe_lists_parameters(tanh1):
    d = tanh1.describe()
    assert d["model"] == "tanh" and d["c"] == 1.0 and d["R"] == 2.0 and d["b"] == 1.0
