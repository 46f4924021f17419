"""Annealed Monte Carlo of dX = b(X) dt + sqrt(2) dW in frozen drift realizations.

The drift is interpolated with periodic cubic B-splines (interpolating, via a
spectral prefilter) on an oversampled grid; a trigonometric mode is kept for
validation.  Positions are unwrapped, the field is evaluated modulo the
period.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numba
import numpy as np
from scipy import fft as sfft

from .errors import ParameterError
from .field import SpectralShellField, TorusGrid, evaluate_at, sample_shell, synthesize_realspace
from .harness.rng import RngLike, as_factory
from .harness.stats import MomentEstimate, batch_means_ci
from .homogenize import msd_prediction
from .ladder import lambda_of_time

Order = Literal["bicubic", "trig-exact"]


def _bspline_prefilter(samples: np.ndarray) -> np.ndarray:
    """Coefficients c with sum_j c_j beta3(x - j) = samples at the nodes (periodic)."""
    out = samples.astype(float, copy=True)
    n = samples.ndim - 1
    for ax in range(1, n + 1):
        N = samples.shape[ax]
        w = 2.0 * np.pi * np.arange(N // 2 + 1) / N
        denom = (4.0 + 2.0 * np.cos(w)) / 6.0
        shape = [1] * out.ndim
        shape[ax] = -1
        out = sfft.irfft(sfft.rfft(out, axis=ax) / denom.reshape(shape), n=N, axis=ax)
    return out


@numba.njit(cache=True, inline="always")
def _weights(t):
    s = 1.0 - t
    t2 = t * t
    t3 = t2 * t
    return s * s * s / 6.0, (3.0 * t3 - 6.0 * t2 + 4.0) / 6.0, (-3.0 * t3 + 3.0 * t2 + 3.0 * t + 1.0) / 6.0, t3 / 6.0


@numba.njit(cache=True, inline="always")
def _wrap4(i, N):
    i0 = (i - 1) % N
    i1 = i0 + 1 if i0 + 1 < N else 0
    i2 = i1 + 1 if i1 + 1 < N else 0
    i3 = i2 + 1 if i2 + 1 < N else 0
    return i0, i1, i2, i3


@numba.njit(cache=True, inline="always")
def _row(coef, i, j0, j1, j2, j3, b0, b1, b2, b3):
    s0 = b0 * coef[i, j0, 0] + b1 * coef[i, j1, 0] + b2 * coef[i, j2, 0] + b3 * coef[i, j3, 0]
    s1 = b0 * coef[i, j0, 1] + b1 * coef[i, j1, 1] + b2 * coef[i, j2, 1] + b3 * coef[i, j3, 1]
    return s0, s1


@numba.njit(cache=True)
def _eval2(coef, h, x, y):
    """Cubic B-spline evaluation; ``coef`` is (N, N, 2) with spacing h."""
    N = coef.shape[0]
    u = x / h
    v = y / h
    fu = math.floor(u)
    fv = math.floor(v)
    a0, a1, a2, a3 = _weights(u - fu)
    b0, b1, b2, b3 = _weights(v - fv)
    i0, i1, i2, i3 = _wrap4(int(fu), N)
    j0, j1, j2, j3 = _wrap4(int(fv), N)
    r00, r01 = _row(coef, i0, j0, j1, j2, j3, b0, b1, b2, b3)
    r10, r11 = _row(coef, i1, j0, j1, j2, j3, b0, b1, b2, b3)
    r20, r21 = _row(coef, i2, j0, j1, j2, j3, b0, b1, b2, b3)
    r30, r31 = _row(coef, i3, j0, j1, j2, j3, b0, b1, b2, b3)
    return a0 * r00 + a1 * r10 + a2 * r20 + a3 * r30, a0 * r01 + a1 * r11 + a2 * r21 + a3 * r31


@numba.njit(cache=True)
def _eval_points(coef, h, pts):
    out = np.empty((pts.shape[0], 2))
    for p in range(pts.shape[0]):
        a, b = _eval2(coef, h, pts[p, 0], pts[p, 1])
        out[p, 0] = a
        out[p, 1] = b
    return out


@numba.njit(cache=True)
def _segment_spline(coef, h, x, y, big, amp, noise, coarsen):
    """Advance one path through the steps in ``noise`` (rows of standard normals)."""
    for s in range(noise.shape[0] // coarsen):
        bx, by = _eval2(coef, h, x, y)
        dx = 0.0
        dy = 0.0
        for c in range(coarsen):
            dx += noise[s * coarsen + c, 0]
            dy += noise[s * coarsen + c, 1]
        x += bx * big + amp * dx
        y += by * big + amp * dy
    return x, y


@numba.njit(cache=True)
def _segment_shear(gamma, x, y, big, amp, noise, coarsen):
    for s in range(noise.shape[0] // coarsen):
        dx = 0.0
        dy = 0.0
        for c in range(coarsen):
            dx += noise[s * coarsen + c, 0]
            dy += noise[s * coarsen + c, 1]
        x += gamma * y * big + amp * dx
        y += amp * dy
    return x, y


NOISE_CHUNK = 1 << 15


@dataclass
class FieldInterpolant:
    """Evaluable drift on the torus (or a synthetic analytic drift).

    ``kind`` is ``"spline"`` for a periodic field, ``"shear"`` for
    b(x) = (gamma x_2, 0) and ``"zero"`` for pure diffusion.
    """

    kind: Literal["spline", "shear", "zero"]
    n: int = 2
    period: float = math.inf
    order: Order = "bicubic"
    coef: np.ndarray | None = None
    spacing: float = 0.0
    sup_norm: float = 0.0
    spectral: SpectralShellField | None = None
    gamma: float = 0.0
    meta: dict = field(default_factory=dict)
    probe_error: float = math.nan

    def __call__(self, points) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        if self.kind == "zero":
            return np.zeros_like(pts)
        if self.kind == "shear":
            out = np.zeros_like(pts)
            out[:, 0] = self.gamma * pts[:, 1]
            return out
        if self.order == "trig-exact":
            return evaluate_at(self.spectral, pts)
        return _eval_points(self.coef, self.spacing, np.ascontiguousarray(pts))


def zero_interpolant(n: int = 2) -> FieldInterpolant:
    return FieldInterpolant("zero", n=n, meta={"epsilon": 0.0})


def shear_interpolant(gamma: float) -> FieldInterpolant:
    return FieldInterpolant("shear", n=2, gamma=float(gamma), sup_norm=math.inf, meta={"gamma": gamma})


def build_interpolant(field_: SpectralShellField, order: Order = "bicubic", oversample: int = 8,
                      n_probe: int = 256, probe_seed: int = 0) -> FieldInterpolant:
    """Interpolant of a drift realization on ``oversample * M`` points per axis.

    ``oversample`` counts points per axis relative to M; the band needs 2M
    points, so 8 means 4x oversampling.  The probe error is the
    RMS deviation from trigonometric evaluation relative to the field RMS.
    """
    grid = field_.grid
    if grid.n != 2:
        raise ParameterError("particle simulation supports n = 2 drifts")
    if field_.rank != "vector":
        raise ParameterError("the drift must be a vector field")
    if order not in ("bicubic", "trig-exact"):
        raise ParameterError(f"unknown interpolation order {order!r}")
    N = int(oversample * grid.M)
    if order == "bicubic" and N < 4 * grid.M:
        raise ParameterError("bicubic interpolation needs at least 2x oversampling of the band")
    samples = synthesize_realspace(field_, N=N)
    coef = _bspline_prefilter(samples)
    h = grid.period / N
    interp = FieldInterpolant("spline", 2, grid.period, order, np.ascontiguousarray(np.moveaxis(coef, 0, -1)), h,
                              float(np.sqrt((samples**2).sum(axis=0)).max()), field_,
                              meta={"epsilon": field_.epsilon, "L": field_.shell[1], "M": grid.M, "N": N})
    if n_probe:
        gen = np.random.default_rng(probe_seed)
        pts = gen.uniform(0.0, grid.period, size=(n_probe, 2))
        exact = evaluate_at(field_, pts)
        approx = _eval_points(interp.coef, h, pts)
        rms = float(np.sqrt((samples**2).sum(axis=0).mean())) or 1.0
        err = approx - exact
        interp.probe_error = float(np.sqrt((err**2).sum(axis=1).mean()) / rms)
        interp.meta["probe_max_error"] = float(np.abs(err).max() / rms)
    return interp


def sample_drift(grid: TorusGrid, epsilon: float, L: float, rng: RngLike) -> SpectralShellField:
    """b_L: all modes with 1/L < |k| <= 1."""
    return sample_shell(grid, epsilon, 1.0, L, rng)


def horizon_grid_M(T: float, epsilon: float, L: float, modes_per_ir: float = 2.5) -> int:
    """Smallest convenient M meeting the escape guard and resolving the IR cutoff."""
    need_period = 8.0 * math.sqrt(float(lambda_of_time(T, epsilon)) * T)
    M = max(math.ceil(need_period / (2.0 * math.pi)), math.ceil(modes_per_ir * L), 8)
    return int(sfft.next_fast_len(M, real=True))


@dataclass
class DisplacementStats:
    T: float
    dt: float
    n: int
    n_fields: int
    paths_per_field: int
    X: np.ndarray  # (n_fields * paths, n) unwrapped endpoints
    field_ids: np.ndarray
    meta: dict = field(default_factory=dict)

    def msd(self) -> MomentEstimate:
        """Batch means over fields (each batch a whole field) when possible."""
        sq = (self.X**2).sum(axis=1)
        if self.n_fields >= 16:
            per = np.array([sq[self.field_ids == f].mean() for f in range(self.n_fields)])
            return batch_means_ci(per, batches=min(32, self.n_fields) if self.n_fields >= 32 else 16)
        return batch_means_ci(sq)

    def second_moment(self) -> np.ndarray:
        return np.einsum("pi,pj->ij", self.X, self.X) / len(self.X)

    def ratio(self) -> MomentEstimate:
        m = self.msd()
        s = 2.0 * self.n * self.T
        return MomentEstimate(m.value / s, m.half_width / s, m.n_samples, m.estimator, m.batches, m.heavy_tail)


def _check_dt(interp: FieldInterpolant, T: float, dt: float) -> None:
    if not dt > 0 or not T > 0:
        raise ParameterError("need T > 0 and dt > 0")
    if interp.kind == "spline" and dt > 0.1 / (1.0 + interp.sup_norm) * (1 + 1e-12):
        raise ParameterError(f"dt={dt} exceeds 0.1/(1 + |b|_inf) = {0.1 / (1.0 + interp.sup_norm):.4g}")


def _escape_guard(interp: FieldInterpolant, T: float) -> None:
    if interp.kind != "spline":
        return
    eps = float(interp.meta.get("epsilon", 0.0))
    need = 8.0 * math.sqrt(float(lambda_of_time(T, eps)) * T)
    if interp.period < need:
        M = math.ceil(need / (2.0 * math.pi))
        raise ParameterError(f"torus period {interp.period:.4g} < 8 sqrt(lam(T) T) = {need:.4g}; "
                             f"use grid M >= {M}")


def run_paths(interp: FieldInterpolant, T: float, dt: float, n_paths: int, rng: RngLike,
              coarsen: int = 1) -> np.ndarray:
    """Endpoints of ``n_paths`` paths from 0 in one frozen field.

    Noise is drawn at step ``dt``; ``coarsen = c`` runs steps of c*dt on the
    summed increments.  Paths consume the stream one after the other in
    chunks whose length is a multiple of ``coarsen``, so runs with the same
    stream are coupled.
    """
    if coarsen < 1 or int(coarsen) != coarsen:
        raise ParameterError("coarsen must be a positive integer")
    _escape_guard(interp, T)
    _check_dt(interp, T, dt * coarsen)
    n_steps = int(round(T / dt))
    if not math.isclose(n_steps * dt, T, rel_tol=1e-9):
        raise ParameterError("T must be an integer multiple of dt")
    if n_steps % coarsen:
        raise ParameterError("the step count must be divisible by coarsen")
    if interp.order == "trig-exact" and interp.kind == "spline":
        return _run_trig(interp, T, dt, n_paths, rng, coarsen)
    fac = as_factory(rng)
    gen = fac.generator()
    if interp.kind == "zero":
        # pure diffusion: the endpoint is exactly Gaussian
        return math.sqrt(2.0 * T) * gen.standard_normal((n_paths, interp.n))
    big = dt * coarsen
    amp = math.sqrt(2.0 * dt)
    chunk = NOISE_CHUNK * coarsen
    X = np.zeros((n_paths, 2))
    for p in range(n_paths):
        x = y = 0.0
        for lo in range(0, n_steps, chunk):
            noise = gen.standard_normal((min(chunk, n_steps - lo), 2))
            if interp.kind == "spline":
                x, y = _segment_spline(interp.coef, interp.spacing, x, y, big, amp, noise, coarsen)
            else:
                x, y = _segment_shear(interp.gamma, x, y, big, amp, noise, coarsen)
        X[p] = x, y
    return X


def _run_trig(interp, T, dt, n_paths, rng, coarsen):
    fac = as_factory(rng)
    gen = fac.generator()
    n_steps = int(round(T / dt))
    X = np.zeros((n_paths, 2))
    amp = math.sqrt(2.0 * dt)
    for _ in range(n_steps // coarsen):
        dw = gen.standard_normal((coarsen, n_paths, 2)).sum(axis=0)
        X += interp(X) * dt * coarsen + amp * dw
    return X


def simulate_paths(
    T: float,
    dt: float,
    n_paths: int,
    n_fields: int,
    rng: RngLike,
    epsilon: float,
    grid_M: int | None = None,
    L: float | None = None,
    order: Order = "bicubic",
    coarsen: int = 1,
    oversample: int = 8,
    n: int = 2,
) -> DisplacementStats:
    """Annealed ensemble: ``n_fields`` drift draws x ``n_paths`` thermal paths each.

    The IR cutoff defaults to L = sqrt(1 + T).  Field f uses stream
    ``(seed, f, "field")`` and its paths ``(seed, f, "paths")``.
    """
    if n_paths < 1 or n_fields < 1:
        raise ParameterError("need n_paths >= 1 and n_fields >= 1")
    fac = as_factory(rng)
    L = math.sqrt(1.0 + T) if L is None else float(L)
    ends = []
    meta: dict = {"epsilon": epsilon, "L": L}
    if epsilon == 0.0:
        interp = zero_interpolant(n)
        for f in range(n_fields):
            ends.append(run_paths(interp, T, dt, n_paths, fac.child(f, "paths"), coarsen))
    else:
        if n != 2:
            raise ParameterError("drift-driven paths are implemented for n = 2")
        M = horizon_grid_M(T, epsilon, L) if grid_M is None else int(grid_M)
        grid = TorusGrid(2, M, 4 * M)
        meta.update(M=M)
        errs = []
        for f in range(n_fields):
            drift = sample_drift(grid, epsilon, L, fac.child(f, "field"))
            interp = build_interpolant(drift, order, oversample, n_probe=64, probe_seed=f)
            errs.append(interp.probe_error)
            ends.append(run_paths(interp, T, dt, n_paths, fac.child(f, "paths"), coarsen))
        meta["max_probe_error"] = float(max(errs))
    X = np.concatenate(ends)
    ids = np.repeat(np.arange(n_fields), n_paths)
    return DisplacementStats(float(T), float(dt), n, n_fields, n_paths, X, ids, meta)


def default_dt(epsilon: float, safety: float = 0.1) -> float:
    """Step meeting dt <= 0.1/(1 + |b|_inf) with |b|_inf bounded by six standard deviations."""
    if epsilon == 0.0:
        return 0.05
    sd = epsilon * math.sqrt(0.5)
    return safety / (1.0 + 6.0 * sd)


def msd_report(stats: Sequence[DisplacementStats], epsilon: float) -> list[dict]:
    """Rows T, msd, ci, prediction 2 n lam(T) T, ratio and the monotonicity flag."""
    rows = []
    for s in sorted(stats, key=lambda x: x.T):
        m = s.msd()
        pred = msd_prediction(s.T, epsilon, s.n)
        r = s.ratio()
        rows.append({"T": s.T, "msd": m.value, "ci": m.half_width, "prediction": pred,
                     "ratio": r.value, "ratio_ci": r.half_width,
                     "lambda_T": float(lambda_of_time(s.T, epsilon)),
                     "ratio_over_lambda": r.value / float(lambda_of_time(s.T, epsilon))})
    mono = all(b["ratio"] + b["ratio_ci"] >= a["ratio"] - a["ratio_ci"] for a, b in zip(rows[:-1], rows[1:]))
    for r in rows:
        r["monotone"] = bool(mono)
    return rows


def shear_msd_exact(T: float, gamma: float) -> float:
    """E|X_T|^2 = 4T + 2 gamma^2 T^3 / 3 for b = (gamma x_2, 0) from the origin."""
    return 4.0 * T + 2.0 * gamma**2 * T**3 / 3.0


__all__ = [
    "DisplacementStats",
    "FieldInterpolant",
    "build_interpolant",
    "default_dt",
    "horizon_grid_M",
    "msd_report",
    "run_paths",
    "sample_drift",
    "shear_interpolant",
    "shear_msd_exact",
    "simulate_paths",
    "zero_interpolant",
]
