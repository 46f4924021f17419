from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scalehom import slbm
from scalehom.harness.rng import StreamFactory


def _amplitudes_by_summation(basis):
    """Solve the 1/2 Id constraints from explicit basis-square sums."""
    n = basis.n
    for B in (basis.sym0_basis, basis.skew_basis):
        gram = np.einsum("aij,bij->ab", B, B)
        np.testing.assert_allclose(gram, np.eye(len(B)), atol=1e-14)
    s = np.einsum("aij,ajk->ik", basis.sym0_basis, basis.sym0_basis)
    k = -np.einsum("aij,ajk->ik", basis.skew_basis, basis.skew_basis)
    np.testing.assert_allclose(s, s[0, 0] * np.eye(n), atol=1e-14)
    np.testing.assert_allclose(k, k[0, 0] * np.eye(n), atol=1e-14)
    # sigma_sym^2 s + sigma_skew^2 k = 1 (E X X^T = Id), sigma_sym^2 s - sigma_skew^2 k = 0 (E X^2 = 0)
    return 1.0 / (2.0 * s[0, 0]), 1.0 / (2.0 * k[0, 0])


@pytest.mark.parametrize("n,sym2,skew2", [(2, 0.5, 1.0), (3, 0.3, 0.5)])
def test_basis_amplitudes(n, sym2, skew2):
    basis = slbm.make_basis(n)
    a, b = _amplitudes_by_summation(basis)
    assert basis.sigma_sym**2 == pytest.approx(a, rel=1e-12) == pytest.approx(sym2)
    assert basis.sigma_skew**2 == pytest.approx(b, rel=1e-12) == pytest.approx(skew2)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_unit_covariance(n):
    X = slbm.sample_at(slbm.make_basis(n), 1.0, 100_000, 1)
    np.testing.assert_allclose(np.einsum("pij,pkj->ik", X, X) / len(X), np.eye(n), atol=0.02)


def test_increment_moments():
    basis = slbm.make_basis(2)
    dB = slbm.sample_at(basis, 0.01, 100_000, 2)
    np.testing.assert_allclose((dB @ dB).mean(axis=0) / 0.01, 0.0, atol=0.02)
    np.testing.assert_allclose(np.einsum("pij,pkj->ik", dB, dB) / len(dB) / 0.01, np.eye(2), atol=0.02)


def _rotations():
    out = []
    for th in (0.3, 1.1, 2.0, 4.0):
        c, s = math.cos(th), math.sin(th)
        out.append(np.array([[c, -s], [s, c]]))
        out.append(np.array([[c, s], [s, -c]]))
    return out


def test_conjugation_invariance():
    X = slbm.sample_at(slbm.make_basis(2), 1.0, 100_000, 3)
    v = X.reshape(len(X), 4)
    base = v.T @ v / len(v)
    for O in _rotations():
        Y = (O @ X @ O.T).reshape(len(X), 4)
        # second-moment tensors agree within Monte Carlo error (entries O(1), stderr ~ 0.005)
        np.testing.assert_allclose(Y.T @ Y / len(Y), base, atol=0.03)
        assert abs(np.mean(Y[:, 1] ** 3) - np.mean(v[:, 1] ** 3)) < 0.05


def test_symmetric_form_values():
    assert slbm.symmetric_form_value(np.eye(2), 3.0) == pytest.approx(0.0)
    assert slbm.symmetric_form_value(np.diag([1.0, -1.0]), 1.0) == pytest.approx(1.0)
    assert slbm.symmetric_form_value(np.diag([1.0, 0.0]), 2.0) == pytest.approx(0.5)


@pytest.mark.parametrize("G,tau", [(np.diag([1.0, -1.0]), 1.0), (np.diag([1.0, 0.0]), 2.0)])
def test_symmetric_form_monte_carlo(G, tau):
    B = slbm.sample_at(slbm.make_basis(2), tau, 200_000, 4)
    est = np.mean(slbm.frobenius_pair(G, B) ** 2)
    exact = slbm.symmetric_form_value(G, tau)
    assert abs(est - exact) / exact < 0.03


def test_covariance_report_unit_time():
    rep = slbm.covariance_report(slbm.make_basis(2), 1.0, 100_000, 5)
    bbt = np.array([[e.value for e in r] for r in rep.bbt])
    assert np.abs(bbt - np.eye(2)).max() < 0.02
    assert abs(rep.cross.value) < rep.cross.half_width * 1.5 + 1e-3


def test_covariance_report_zero_time():
    rep = slbm.covariance_report(slbm.make_basis(3), 0.0, 1000, 0)
    assert all(e.value == 0.0 and e.half_width == 0.0 for row in rep.bb + rep.bbt for e in row)


@given(n=st.integers(2, 5), seed=st.integers(0, 2**40), dtau=st.floats(1e-4, 10.0))
def test_samples_trace_free(n, seed, dtau):
    X = slbm.sample_matrices(slbm.make_basis(n), dtau, StreamFactory(seed).generator(), 16)
    assert np.abs(np.trace(X, axis1=1, axis2=2)).max() < 1e-12 * max(1.0, math.sqrt(dtau)) * 10


@given(seed=st.integers(0, 2**40))
def test_sampling_reproducible(seed):
    basis = slbm.make_basis(2)
    a = slbm.sample_at(basis, 1.0, 100, seed)
    b = slbm.sample_at(basis, 1.0, 100, seed)
    np.testing.assert_array_equal(a, b)
