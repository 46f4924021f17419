from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate

from scalehom import ladder
from scalehom.errors import ParameterError

eps_st = st.floats(0.01, 1.0)


def test_single_shell_lambda():
    lad = ladder.make_ladder(0.5, math.exp(4.0), 1)
    assert lad.lambdas[-1] == pytest.approx(math.sqrt(1.0 + 0.25 * 4.0), abs=1e-12)


def test_unit_ladder_is_trivial():
    lad = ladder.make_ladder(0.3, 1.0, 1)
    assert lad.lambdas[-1] == 1.0
    assert lad.taus[-1] == 0.0


def test_uniform_in_tau_roundtrip():
    eps = 0.5
    lad = ladder.make_ladder(eps, math.exp(4.0), 4, "uniform-in-tau")
    j = np.arange(5)
    np.testing.assert_allclose(lad.taus, j * math.log(math.sqrt(2.0)) / 4, atol=1e-14)
    # invert lt = e^tau by hand: L = exp((lt^2 - 1) / eps^2)
    L = np.exp((np.exp(2.0 * lad.taus) - 1.0) / eps**2)
    np.testing.assert_allclose(L, lad.levels, rtol=1e-12)


@pytest.mark.parametrize("eps,L_max", [(0.5, math.exp(4.0)), (1.0, math.e)])
def test_ode_matches_closed_form(eps, L_max):
    assert abs(ladder.integrate_lambda_ode(eps, L_max, 10_000) - math.sqrt(2.0)) < 1e-8


def test_ode_zero_drift():
    assert ladder.integrate_lambda_ode(0.0, 50.0, 100) == 1.0


def test_lambda_of_time_values():
    assert ladder.lambda_of_time(0.0, 0.3) == 1.0
    assert ladder.lambda_of_time(math.exp(8.0) - 1.0, 0.5) == pytest.approx(math.sqrt(2.0), rel=1e-12)


def test_tau_of_time_matches_ladder():
    eps = 0.4
    lad = ladder.make_ladder(eps, 100.0, 5, "geometric-in-L")
    # lam(s)^2 = lt(L)^2 with L^2 = 1 + s
    s = lad.levels**2 - 1.0
    np.testing.assert_allclose(ladder.tau_of_time(s, eps), lad.taus, atol=1e-12)


@pytest.mark.parametrize("p", [1.0, 2.0])
@pytest.mark.parametrize("tau_star", [0.0, 0.7, 3.0])
def test_I3_closed_form(p, tau_star):
    e = ladder.envelope_integrals(tau_star, p, 0.5)
    exact = math.exp(-p * tau_star) / p
    assert abs(e.I3 - exact) / exact < 1e-10


def test_I2_bound_reported():
    eps, p = 0.5, 2.0
    ts = math.log(math.sqrt(2.0))
    e = ladder.envelope_integrals(ts, p, eps)
    L_star = math.exp(4.0)

    # independent quadrature in ln L: d tau = eps^2 / (2 lt^2) d lnL, lt^2 = 1 + eps^2 lnL
    def integrand(lnL):
        return math.exp(-p * lnL) * eps**2 / 2.0

    ref = integrate.quad(integrand, 4.0, math.inf, epsabs=1e-15, epsrel=1e-12)[0]
    assert e.I2 == pytest.approx(ref, rel=1e-8)
    assert e.C2 == pytest.approx(ref * L_star**p / eps**2, rel=1e-8)
    assert math.isfinite(e.C2)


def test_I1_empty_range():
    e = ladder.envelope_integrals(0.0, 1.0, 1.0)
    assert e.I1 == 0.0 and e.C1 == 0.0


def test_invalid_arguments():
    with pytest.raises(ParameterError):
        ladder.make_ladder(0.5, 0.5, 2)
    with pytest.raises(ParameterError):
        ladder.make_ladder(0.5, 10.0, 0)
    with pytest.raises(ParameterError):
        ladder.make_ladder(0.0, 10.0, 2, "uniform-in-tau")
    with pytest.raises(ParameterError):
        ladder.envelope_integrals(-1.0, 1.0, 0.5)


@given(eps=eps_st, log_L=st.one_of(st.just(0.0), st.floats(1e-6, 50.0)), J=st.integers(1, 40),
       spacing=st.sampled_from(["uniform-in-tau", "geometric-in-L"]))
def test_ladder_invariants(eps, log_L, J, spacing):
    lad = ladder.make_ladder(eps, math.exp(log_L), J, spacing)
    assert lad.levels[0] == 1.0 and lad.taus[0] == 0.0
    np.testing.assert_allclose(lad.lambdas**2, 1.0 + eps**2 * lad.log_levels, rtol=1e-12, atol=1e-12)
    np.testing.assert_allclose(lad.taus, np.log(lad.lambdas), atol=1e-12)
    if log_L > 0:
        assert np.all(np.diff(lad.log_levels) > 0)
        assert np.all(np.diff(lad.taus) >= 0)


@given(eps=eps_st, L=st.floats(1.0, 1e12))
def test_lambda_scale_roundtrip(eps, L):
    lt = ladder.lambda_tilde(L, eps)
    assert ladder.log_scale_of_lambda(lt, eps) == pytest.approx(math.log(L), rel=1e-10, abs=1e-10)


@given(eps=eps_st, s=st.floats(0.0, 1e8))
def test_lambda_of_time_monotone_and_bounded(eps, s):
    lam = ladder.lambda_of_time(s, eps)
    assert 1.0 <= lam <= ladder.lambda_of_time(2.0 * s + 1.0, eps)
