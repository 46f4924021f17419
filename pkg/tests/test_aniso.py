from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from scalehom import aniso


@pytest.fixture(scope="module")
def q2():
    return aniso.make_quadrature(2)


def _f_circle(a):
    """Oracle: f(a) = 2 int (I - k k^T)/(k.a k) dtheta/2pi on the unit circle, adaptive quadrature."""
    out = np.zeros((2, 2))
    for i in range(2):
        for j in range(2):
            def g(th, i=i, j=j):
                k = np.array([math.cos(th), math.sin(th)])
                return ((i == j) - k[i] * k[j]) / (k @ a @ k)
            out[i, j] = 2.0 * integrate.quad(g, 0, 2 * math.pi, epsabs=1e-13, epsrel=1e-12, limit=400)[0] / (2 * math.pi)
    return out


def test_identity_fixed(q2):
    np.testing.assert_allclose(aniso.f_of_a(np.eye(2), q2), np.eye(2), atol=1e-10)


def test_diag41(q2):
    got = aniso.f_of_a(np.diag([4.0, 1.0]), q2)
    np.testing.assert_allclose(got, np.diag([2 / 3, 1 / 3]), atol=1e-8)
    np.testing.assert_allclose(got, _f_circle(np.diag([4.0, 1.0])), atol=1e-8)


@pytest.mark.parametrize("s", [0.5, 2.0, 10.0])
def test_homogeneity(q2, s):
    a = np.array([[2.0, 0.3], [0.3, 0.7]])
    np.testing.assert_allclose(aniso.f_of_a(s * a, q2), aniso.f_of_a(a, q2) / s, atol=1e-10)


def test_identity_stationary(q2):
    tr = aniso.flow_integrate(np.eye(2), 0.05, 5.0, q2)
    assert tr.distance_to_identity().max() < 1e-10


def test_convergence_from_diag(q2):
    tr = aniso.flow_integrate(np.diag([4.0, 0.25]), 0.01, 40.0, q2)
    assert tr.distance_to_identity()[-1] < 1e-6
    ev = tr.eigenvalues()
    ratio = ev[:, -1] / ev[:, 0]
    d = np.diff(ratio)
    assert np.all(d[ratio[1:] - 1 > 1e-9] < 0)


def test_df_trace_free(q2):
    adot = np.array([[0.4, 0.3], [0.3, -0.4]])
    np.testing.assert_allclose(aniso.df_identity(adot), 0.5 * adot, atol=1e-14)
    np.testing.assert_allclose(aniso.df_identity_fd(adot, q2), 0.5 * adot, atol=1e-6)


@pytest.mark.parametrize("n", [2, 3])
def test_df_identity_direction(n):
    q = aniso.make_quadrature(n)
    np.testing.assert_allclose(aniso.df_identity(np.eye(n)), -np.eye(n), atol=1e-14)
    np.testing.assert_allclose(aniso.df_identity_fd(np.eye(n), q), -np.eye(n), atol=1e-6)


def test_decay_rate(q2):
    tr = aniso.flow_integrate(np.diag([4.0, 0.25]), 0.01, 40.0, q2)
    assert abs(aniso.decay_rate(tr, 10.0, 20.0) - 0.5) < 0.05


def test_monotone_pairs(q2):
    rep = aniso.monotonicity_check([(np.eye(2), 2 * np.eye(2))], q2)
    assert rep.min_eigs[0] == pytest.approx(0.5, abs=1e-10)
    lo, hi = np.diag([2.0, 1.0]), np.diag([4.0, 1.0])
    expect = np.diag([2 / (math.sqrt(2) + 1) - 2 / 3, 2 / (math.sqrt(2) * (math.sqrt(2) + 1)) - 1 / 3])
    np.testing.assert_allclose(aniso.f_of_a(lo, q2) - aniso.f_of_a(hi, q2), expect, atol=1e-8)
    assert aniso.monotonicity_check([(lo, hi)], q2).ok


def test_random_pairs(q2):
    gen = np.random.default_rng(0)
    pairs = []
    for _ in range(20):
        X = gen.standard_normal((2, 2))
        lo = X @ X.T + 0.2 * np.eye(2)
        v = gen.standard_normal(2)
        pairs.append((lo, lo + np.outer(v, v)))
    assert aniso.monotonicity_check(pairs, q2).ok


def test_lebedev_identity():
    q3 = aniso.make_quadrature(3)
    np.testing.assert_allclose(q3.second_moment(), np.eye(3) / 3, atol=1e-14)
    np.testing.assert_allclose(aniso.f_of_a(np.eye(3), q3), np.eye(3), atol=1e-12)


def test_fences_bracket(q2):
    tr = aniso.flow_integrate(np.diag([4.0, 0.25]), 0.01, 10.0, q2)
    ev = tr.eigenvalues()
    lo, hi = aniso.fences(0.25, 4.0, tr.taus)
    assert np.all(ev[:, 0] >= lo - 1e-9) and np.all(ev[:, -1] <= hi + 1e-9)


spd = st.tuples(st.floats(0.2, 5.0), st.floats(0.2, 5.0), st.floats(-0.9, 0.9)).map(
    lambda t: np.array([[t[0], t[2] * math.sqrt(t[0] * t[1])], [t[2] * math.sqrt(t[0] * t[1]), t[1]]]))


@settings(max_examples=30)
@given(a=spd)
def test_f_closed_form_diag_and_spd(a):
    q = aniso.make_quadrature(2)
    f = aniso.f_of_a(a, q)
    assert np.all(np.linalg.eigvalsh(f) > 0)
    w, V = np.linalg.eigh(a)
    np.testing.assert_allclose(V.T @ f @ V, aniso.f_diag_2d(w[0], w[1]), atol=1e-8)


@settings(max_examples=20)
@given(a=spd, s=st.floats(0.1, 10.0))
def test_homogeneity_property(a, s):
    q = aniso.make_quadrature(2)
    np.testing.assert_allclose(aniso.f_of_a(s * a, q) * s, aniso.f_of_a(a, q), rtol=1e-9, atol=1e-10)
