from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scalehom import flow, slbm
from scalehom.errors import ParameterError
from scalehom.harness.rng import StreamFactory


def test_zero_increment_keeps_state():
    F = np.array([[2.0, 1.0], [1.0, 1.0]])
    st_ = flow.step(flow.FlowState(F, 0.3), slbm.SlIncrement(np.zeros((2, 2)), 0.01))
    np.testing.assert_array_equal(st_.F, F)
    assert st_.tau == pytest.approx(0.31)


def test_determinant_after_many_steps():
    ens = flow.simulate_ensemble(2, 1.0, 1e-4, 8, 1)
    assert np.abs(np.linalg.det(ens.at(1.0)) - 1.0).max() < 1e-9


def test_one_step_second_moment():
    dt = 0.01
    n_paths = 1_000_000
    dB = slbm.sample_at(slbm.make_basis(2), dt, n_paths, 2)
    F = flow.step_matrices(np.broadcast_to(np.eye(2), dB.shape), dB)
    prod = np.einsum("pij,pkj->pik", F, F)
    m = prod.mean(axis=0)
    se = prod.std(axis=0) / math.sqrt(n_paths)
    # second-order expansion of E expm(dB) expm(dB)^T: (1 + dt) Id + dt^2 (1 + ...)/2, bounded by 2 dt^2
    target = (1.0 + dt) * np.eye(2)
    assert np.all(np.abs(m - target) <= 3.0 * se + 2.0 * dt**2)


@pytest.fixture(scope="module")
def ens2():
    return flow.simulate_ensemble(2, 2.0, 0.01, 20_000, 3, snapshot_times=[1.0, 2.0])


def test_normalization_n2(ens2):
    F = ens2.at(1.0)
    np.testing.assert_allclose(np.einsum("pij,pkj->ik", F, F) / len(F), math.e * np.eye(2), rtol=0.03, atol=0.03 * math.e)


def test_frobenius_n3():
    ens = flow.simulate_ensemble(3, 1.0, 0.01, 20_000, 4)
    m = flow.frobenius_moment(ens, 1, 1.0)
    assert abs(m.estimate.value - 3 * math.e) / (3 * math.e) < 0.03


def test_rotation_invariance(ens2):
    F = ens2.at(1.0)
    base = np.einsum("pij,pkl->ijkl", F, F) / len(F)
    th = 0.7
    O = np.array([[math.cos(th), -math.sin(th)], [math.sin(th), math.cos(th)]])
    G = O @ F @ O.T
    rot = np.einsum("pij,pkl->ijkl", G, G) / len(G)
    assert np.abs(rot - base).max() < 0.15


def test_two_parameter_increment(ens2):
    eye = flow.two_parameter_increment(ens2, 1.0, 1.0)
    np.testing.assert_array_equal(eye, np.broadcast_to(np.eye(2), eye.shape))
    a = flow.two_parameter_increment(ens2, 0.0, 1.0)
    b = flow.two_parameter_increment(ens2, 1.0, 2.0)
    c = flow.two_parameter_increment(ens2, 0.0, 2.0)
    np.testing.assert_allclose(a @ b, c, atol=1e-10)


def test_increment_independence():
    ens = flow.simulate_ensemble(2, 2.0, 0.01, 10_000, 5, snapshot_times=[1.0, 2.0])
    a = flow.two_parameter_increment(ens, 0.0, 1.0).reshape(-1, 4)
    b = flow.two_parameter_increment(ens, 1.0, 2.0).reshape(-1, 4)
    for i in range(4):
        for j in range(4):
            rho = np.corrcoef(a[:, i], b[:, j])[0, 1]
            assert abs(rho) < 4.0 / math.sqrt(10_000)


def test_frobenius_moments(ens2):
    m1 = flow.frobenius_moment(ens2, 1, 1.0)
    assert abs(m1.estimate.value / (2 * math.e) - 1) < 0.03
    m2 = flow.frobenius_moment(ens2, 2, 1.0)
    assert math.e**3 <= m2.estimate.value <= 4 * math.e**3
    m0 = flow.frobenius_moment(ens2, 3, 0.0)
    assert m0.estimate.value == 2.0**3


def test_lyapunov_n2():
    res = flow.lyapunov_spectrum(2, 200.0, 0.005, 10, 6, n_paths=8, burn_in=5.0)
    np.testing.assert_allclose(res.exponents, [0.25, -0.25], rtol=0.1)
    assert abs(res.total) < 0.01


def test_lyapunov_n3_distinct_and_symmetric():
    res = flow.lyapunov_spectrum(3, 100.0, 0.01, 10, 7, n_paths=16, burn_in=5.0)
    assert abs(res.total) < 0.01
    for i in range(2):
        gap = res.per_path[:, i] - res.per_path[:, i + 1]
        assert gap.mean() > 3 * 1.96 * gap.std(ddof=1) / math.sqrt(len(gap))
    # F and F^{-T} equal in law: lambda_1 = -lambda_3 and lambda_2 = 0 within CI
    assert abs(res.exponents[0] + res.exponents[2]) < 3 * (res.ci[0] + res.ci[2])
    assert abs(res.exponents[1]) < 3 * res.ci[1] + 0.01


def test_bad_grid():
    with pytest.raises(ParameterError):
        flow.simulate_ensemble(2, 1.0, 0.3, 10, 0)


@given(seed=st.integers(0, 2**40), n=st.integers(2, 4), scale=st.floats(0.0, 3.0))
def test_exp_step_unimodular(seed, n, scale):
    X = slbm.sample_matrices(slbm.make_basis(n), scale**2 + 1e-12, StreamFactory(seed).generator(), 8)
    out = flow.step_matrices(np.broadcast_to(np.eye(n), X.shape), X)
    np.testing.assert_allclose(np.linalg.det(out), 1.0, rtol=1e-9)


@given(seed=st.integers(0, 2**40), scale=st.floats(0.0, 3.0))
def test_closed_form_exponential(seed, scale):
    from scipy.linalg import expm

    X = slbm.sample_matrices(slbm.make_basis(2), scale**2 + 1e-12, StreamFactory(seed).generator(), 4)
    for x in X:
        np.testing.assert_allclose(flow.expm_sl2(x), expm(x), rtol=1e-10, atol=1e-12)


@given(seed=st.integers(0, 2**20))
def test_ensemble_deterministic(seed):
    a = flow.simulate_ensemble(2, 0.1, 0.01, 5, seed)
    b = flow.simulate_ensemble(2, 0.1, 0.01, 5, seed)
    np.testing.assert_array_equal(a.snapshots, b.snapshots)
