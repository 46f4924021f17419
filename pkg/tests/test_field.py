from __future__ import annotations

import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scalehom import field as sf
from scalehom import homogenize, ladder
from scalehom.errors import ParameterError, SynthesisError


@pytest.fixture(scope="module")
def grid128():
    return sf.TorusGrid(2, 128)


def test_full_variance_mode_sum(grid128):
    target = 0.4**2 * 2 / 4
    assert target == pytest.approx(0.08)
    # independent oracle: per-mode covariance s (I - khat khat^T) has trace s (n - 1); both half spaces
    s = grid128.variance_weights(0.4)
    assert abs(2.0 * s.sum() * (grid128.n - 1) - target) / target < 0.05
    assert abs(sf.total_variance(grid128, 0.4) - target) / target < 0.05


def test_truncated_variance_mode_sum(grid128):
    target = 0.4**2 * 0.5 * (1 - 1 / 4)
    assert target == pytest.approx(0.06)
    assert abs(sf.total_variance(grid128, 0.4, 2.0) - target) / target < 0.05


def test_sampled_variance_matches(grid128):
    vals = [np.trace(sf.parseval_mean(sf.sample_shell(grid128, 0.4, 1.0, 2.0, s))) for s in range(64)]
    assert abs(np.mean(vals) - 0.06) / 0.06 < 0.05


def test_divergence_per_mode(grid128):
    b = sf.sample_shell(grid128, 0.4, 1.0, math.inf, 3)
    assert np.abs(np.einsum("mi,mi->m", b.kvec, b.coeffs)).max() < 1e-12


def _single_mode(grid, idx, vec):
    sl = slice(idx, idx + 1)
    return sf.SpectralShellField(grid, (1.0, math.inf), sl, np.asarray(vec, complex)[None], "vector", 0.3)


def test_stream_single_mode_gauge():
    grid = sf.TorusGrid(2, 16)
    idx = 10
    k = grid.kvec[idx]
    v = np.array([-k[1], k[0]]) * (0.7 - 0.2j)
    psi = sf.stream_increment(_single_mode(grid, idx, v)).coeffs[0]
    np.testing.assert_allclose(psi, -psi.T, atol=1e-15)
    np.testing.assert_allclose(1j * psi @ k, v, atol=1e-14)


def test_psi_log_divergence_constant_slope():
    grid = sf.TorusGrid(2, 256)
    Ls = [4.0, 8.0, 16.0, 32.0, 64.0]
    slopes = {}
    for eps in (0.2, 0.4):
        v = [sf.expected_psi_variance(grid, eps, L) for L in Ls]
        local = np.diff(v) / np.diff(np.log(Ls)) / eps**2
        assert local.max() / local.min() < 1.1
        slopes[eps] = local.mean()
    assert abs(slopes[0.2] / slopes[0.4] - 1.0) < 0.1


def test_n2_scalar_stream_reconstructs_drift():
    grid = sf.TorusGrid(2, 32)
    db = sf.sample_shell(grid, 0.5, 1.0, 8.0, 11)
    Psi = sf.stream_increment(db).coeffs
    psi = Psi[:, 0, 1]
    np.testing.assert_allclose(Psi[:, 1, 0], -psi, atol=1e-15)
    np.testing.assert_allclose(Psi[:, 0, 0], 0, atol=1e-15)
    k = db.kvec
    # b = -grad_perp psi with grad_perp = (-d_2, d_1)
    b = np.stack([1j * k[:, 1] * psi, -1j * k[:, 0] * psi], axis=1)
    np.testing.assert_allclose(b, db.coeffs, atol=1e-10)


def test_thin_shell_corrector():
    grid = sf.TorusGrid(2, 64)
    r = 50.0  # |m| = 50 shell
    db = sf.sample_shell(grid, 0.5, 64.0 / (r + 0.001), 64.0 / (r - 0.001), 1)
    assert len(db.coeffs) > 0
    L = 64.0 / r
    lt = float(ladder.lambda_tilde(L, 0.5))
    np.testing.assert_allclose(db.kabs, 1.0 / L, rtol=1e-12)
    per_mode = sf.corrector_increment(db).coeffs
    fixed = sf.corrector_increment(db, lt).coeffs
    np.testing.assert_allclose(per_mode, db.coeffs * L**2 / lt, rtol=1e-12)
    np.testing.assert_allclose(fixed, per_mode, rtol=1e-12)


def test_qv_normalization_small_ensemble():
    grid = sf.TorusGrid(2, 128)
    lad = ladder.make_ladder(0.2, 16.0, 4)
    q = homogenize.qv_accumulator(grid, lad, 5, 200)
    tau = float(lad.taus[-1])
    mean = q.sym_spatial.mean(axis=0)
    np.testing.assert_allclose(np.diag(mean), tau, rtol=0.05)
    assert abs(mean[0, 1]) < 0.05 * tau


def test_sigma_residual_and_skew():
    grid = sf.TorusGrid(2, 48)
    db = sf.sample_shell(grid, 0.3, 2.0, 6.0, 4)
    dphi = sf.corrector_increment(db)
    dpsi = sf.stream_increment(db)
    sig = sf.sigma_increment(dpsi, dphi)
    assert sf.sigma_residual(dpsi, dphi, sig) < 1e-10
    for s in sig:
        assert np.abs(s.coeffs + np.swapaxes(s.coeffs, 1, 2)).max() < 1e-12


def test_single_mode_synthesis_is_cosine():
    grid = sf.TorusGrid(2, 8, 32)
    idx = 5
    c = np.array([0.3 - 0.4j, 0.1 + 0.2j])
    f = _single_mode(grid, idx, c)
    real = sf.synthesize_realspace(f)
    x = sf.real_grid_points(grid)
    X, Y = np.meshgrid(x, x, indexing="ij")
    k = grid.kvec[idx]
    phase = k[0] * X + k[1] * Y
    for i in range(2):
        expect = 2.0 * abs(c[i]) * np.cos(phase + np.angle(c[i]))
        np.testing.assert_allclose(real[i], expect, atol=1e-13)


def test_parseval(grid128):
    b = sf.sample_shell(grid128, 0.4, 1.0, 8.0, 9)
    real = sf.synthesize_realspace(b)
    spatial = np.einsum("iab,jab->ij", real, real) / real[0].size
    np.testing.assert_allclose(spatial, sf.parseval_mean(b), rtol=1e-10, atol=1e-16)


def test_realspace_divergence():
    grid = sf.TorusGrid(2, 64)
    b = sf.sample_shell(grid, 0.4, 1.0, math.inf, 2)
    _, g = sf.synthesize_realspace(b, gradient_channels=True)
    div = g[0, 0] + g[1, 1]
    assert np.sqrt((div**2).mean()) / np.sqrt((g**2).sum(axis=(0, 1)).mean()) < 1e-8


def test_non_hermitian_rejected():
    grid = sf.TorusGrid(2, 8)
    b = replace(sf.sample_shell(grid, 0.4, 1.0, 4.0, 0), hermitian=False)
    with pytest.raises(SynthesisError):
        sf.synthesize_realspace(b)


def test_invalid_shell():
    with pytest.raises(ParameterError):
        sf.TorusGrid(2, 8).shell_slice(4.0, 2.0)


def test_snapshot_roundtrip(tmp_path):
    grid = sf.TorusGrid(2, 8)
    real = sf.synthesize_realspace(sf.sample_shell(grid, 0.4, 1.0, 4.0, 0))
    snap = sf.FieldSnapshot(real, {"n": 2, "M": 8})
    snap.save(str(tmp_path / "s"))
    back = sf.FieldSnapshot.load(str(tmp_path / "s"))
    np.testing.assert_array_equal(back.data, real)
    assert back.manifest["shape"] == list(real.shape) and back.manifest["M"] == 8


shell_st = st.tuples(st.floats(1.0, 8.0), st.floats(1.0, 8.0)).map(sorted)


@given(seed=st.integers(0, 2**32), n=st.sampled_from([2, 3]), shell=shell_st, eps=st.floats(0.01, 1.0))
def test_shell_sample_properties(seed, n, shell, eps):
    grid = sf.TorusGrid(n, 8 if n == 2 else 5)
    lo, hi = shell
    sl = grid.shell_slice(lo, hi)
    if sl.stop == sl.start:
        return
    db = sf.sample_shell(grid, eps, lo, hi, seed)
    assert np.all(grid.kabs[sl] > 1.0 / hi - 1e-15) and np.all(grid.kabs[sl] <= 1.0 / lo + 1e-15)
    assert np.abs(np.einsum("mi,mi->m", db.kvec, db.coeffs)).max() < 1e-12
    dphi = sf.corrector_increment(db)
    dpsi = sf.stream_increment(db)
    np.testing.assert_allclose(dpsi.coeffs, -np.swapaxes(dpsi.coeffs, 1, 2), atol=1e-15)
    np.testing.assert_allclose(sf.divergence_tensor(dpsi).coeffs, db.coeffs, atol=1e-12)
    assert np.abs(np.einsum("mi,mi->m", dphi.kvec, dphi.coeffs)).max() < 1e-10
    sig = sf.sigma_increment(dpsi, dphi)
    assert sf.sigma_residual(dpsi, dphi, sig) < 1e-10


@given(seed=st.integers(0, 2**32))
def test_same_stream_same_field(seed):
    grid = sf.TorusGrid(2, 8)
    a = sf.sample_shell(grid, 0.5, 1.0, 4.0, seed)
    b = sf.sample_shell(grid, 0.5, 1.0, 4.0, seed)
    np.testing.assert_array_equal(a.coeffs, b.coeffs)
