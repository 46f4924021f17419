"""Geometric Brownian motion dF = F dB on SL(n).

Since E dB^2 = 0 the Ito and Stratonovich forms coincide, so the exponential
Euler step F <- F expm(dB) is consistent and keeps det F = 1 exactly.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Literal, Sequence

import numpy as np
from scipy import linalg

from .errors import IntegrationError, ParameterError, ResourceError
from .harness.rng import RngLike, as_factory, chunk_bounds
from .harness.stats import MomentEstimate, batch_means_ci
from .slbm import SlBasis, SlIncrement, make_basis, sample_matrices

Scheme = Literal["exp", "euler-renorm"]

MAX_PATH_STEPS = 5e9
PATH_CHUNK = 4096


@dataclass(frozen=True)
class FlowState:
    F: np.ndarray
    tau: float


def expm_sl2(X: np.ndarray) -> np.ndarray:
    """Closed-form exponential of trace-free 2x2 matrices (batched).

    Uses X^2 = -det(X) Id, so expm(X) = c(d) Id + s(d) X with d = -det X.
    """
    a, b = X[..., 0, 0], X[..., 0, 1]
    c, d = X[..., 1, 0], X[..., 1, 1]
    delta = -(a * d - b * c)
    r = np.sqrt(np.abs(delta))
    pos = delta >= 0
    with np.errstate(invalid="ignore", divide="ignore"):
        ch = np.where(pos, np.cosh(r), np.cos(r))
        sh = np.where(pos, np.sinh(r), np.sin(r))
        small = r < 1e-4
        coef = np.where(small, 1.0 + delta / 6.0 + delta**2 / 120.0, sh / np.where(small, 1.0, r))
    out = coef[..., None, None] * X
    out[..., 0, 0] += ch
    out[..., 1, 1] += ch
    return out


def expm_sl(X: np.ndarray) -> np.ndarray:
    if X.shape[-1] == 2:
        return expm_sl2(X)
    return linalg.expm(X)


def step_matrices(F: np.ndarray, dB: np.ndarray, scheme: Scheme = "exp") -> np.ndarray:
    """Advance a batch of states by one increment each."""
    if scheme == "exp":
        out = F @ expm_sl(dB)
    elif scheme == "euler-renorm":
        n = F.shape[-1]
        out = F @ (np.eye(n) + dB)
        det = np.linalg.det(out)
        if np.any(det <= 0):
            raise IntegrationError("euler-renorm step left the positive-determinant component")
        out = out * (det ** (-1.0 / n))[..., None, None]
    else:
        raise ParameterError(f"unknown scheme {scheme!r}")
    if not np.all(np.isfinite(out)):
        raise IntegrationError("non-finite flow state")
    return out


def step(state: FlowState, dB: SlIncrement, scheme: Scheme = "exp") -> FlowState:
    F = step_matrices(state.F[None], dB.matrix[None], scheme)[0]
    return FlowState(F, state.tau + dB.dtau)


@dataclass
class FlowEnsemble:
    """Snapshots of independent flow paths started at the identity.

    ``snapshots[t]`` has shape (n_paths, n, n) and belongs to ``times[t]``;
    time 0 is always stored.
    """

    n: int
    dtau: float
    times: np.ndarray
    snapshots: np.ndarray
    scheme: str = "exp"
    meta: dict = field(default_factory=dict)

    @property
    def n_paths(self) -> int:
        return self.snapshots.shape[1]

    def index_of(self, tau: float) -> int:
        hits = np.nonzero(np.isclose(self.times, tau, rtol=0, atol=1e-9))[0]
        if hits.size == 0:
            raise ParameterError(f"tau={tau} is not a stored snapshot (have {self.times.tolist()})")
        return int(hits[0])

    def at(self, tau: float) -> np.ndarray:
        return self.snapshots[self.index_of(tau)]


def _simulate_chunk(basis, n_steps, dtau, record, size, gen, scheme):
    n = basis.n
    F = np.broadcast_to(np.eye(n), (size, n, n)).copy()
    snaps = [F.copy()]
    for s in range(1, n_steps + 1):
        F = step_matrices(F, sample_matrices(basis, dtau, gen, size), scheme)
        if s in record:
            snaps.append(F.copy())
    return np.stack(snaps)


def simulate_ensemble(
    n: int,
    tau_end: float,
    dtau: float,
    n_paths: int,
    rng: RngLike = 0,
    snapshot_times: Sequence[float] | None = None,
    scheme: Scheme = "exp",
    threads: int = 1,
    chunk: int = PATH_CHUNK,
) -> FlowEnsemble:
    """Simulate ``n_paths`` flows from F = Id up to ``tau_end``.

    Paths are grouped into fixed chunks with their own streams, so the result
    does not depend on ``threads``.
    """
    if not tau_end > 0 or not dtau > 0 or n_paths < 1:
        raise ParameterError("need tau_end > 0, dtau > 0 and n_paths >= 1")
    n_steps = int(round(tau_end / dtau))
    if not math.isclose(n_steps * dtau, tau_end, rel_tol=1e-9):
        raise ParameterError("tau_end must be an integer multiple of dtau")
    if n_paths * n_steps > MAX_PATH_STEPS:
        raise ResourceError(f"{n_paths} paths x {n_steps} steps exceeds the resource guard")
    if snapshot_times is None:
        snapshot_times = [tau_end]
    record_steps = sorted({int(round(t / dtau)) for t in snapshot_times if t > 0})
    if record_steps and record_steps[-1] > n_steps:
        raise ParameterError("snapshot beyond tau_end")
    record = set(record_steps)
    basis = make_basis(n)
    fac = as_factory(rng)
    bounds = chunk_bounds(n_paths, chunk)

    def work(c):
        a, b = bounds[c]
        return _simulate_chunk(basis, n_steps, dtau, record, b - a, fac.generator(c), scheme)

    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            parts = list(ex.map(work, range(len(bounds))))
    else:
        parts = [work(c) for c in range(len(bounds))]
    snaps = np.concatenate(parts, axis=1)
    times = np.array([0.0] + [s * dtau for s in record_steps])
    return FlowEnsemble(n, float(dtau), times, snaps, scheme, {"seed": fac.seed, "n_steps": n_steps})


def two_parameter_increment(ensemble: FlowEnsemble, tau_star: float, tau: float) -> np.ndarray:
    """F_{tau*, tau} = F_{tau*}^{-1} F_tau per path; the identity when tau <= tau*."""
    if tau <= tau_star:
        ensemble.index_of(tau_star)
        return np.broadcast_to(np.eye(ensemble.n), ensemble.snapshots.shape[1:]).copy()
    Fs = ensemble.at(tau_star)
    Ft = ensemble.at(tau)
    return np.linalg.solve(Fs, Ft)


def frobenius_sq(F: np.ndarray) -> np.ndarray:
    return np.einsum("...ij,...ij->...", F, F)


@dataclass(frozen=True)
class FrobeniusMoment:
    p: int
    tau: float
    estimate: MomentEstimate
    ratio: float  # estimate / exp(p(p+1) tau / 2)
    heavy_tail_warning: bool


def frobenius_moment(ensemble: FlowEnsemble, p: int, tau: float) -> FrobeniusMoment:
    """E |F_tau|^{2p} for p in {1, 2, 3}."""
    if p not in (1, 2, 3):
        raise ParameterError("only p in {1, 2, 3} is supported")
    z = frobenius_sq(ensemble.at(tau)) ** p
    if np.ptp(z) == 0.0:
        est = MomentEstimate(float(z[0]), 0.0, z.size, "batch-means", 32)
    else:
        est = batch_means_ci(z)
    ratio = est.value / math.exp(0.5 * p * (p + 1) * tau)
    warn = est.value > 0 and est.half_width / est.value > 0.2
    return FrobeniusMoment(p, float(tau), est, ratio, bool(warn))


@dataclass
class LyapunovAccumulator:
    Q: np.ndarray  # (paths, n, n)
    log_r: np.ndarray  # (paths, n)
    tau_elapsed: float = 0.0

    def absorb(self, A: np.ndarray, dtau: float) -> None:
        """Push the frame through A (batched) and re-orthonormalize."""
        Y = A @ self.Q
        q, r = np.linalg.qr(Y)
        d = np.diagonal(r, axis1=-2, axis2=-1)
        if np.any(np.abs(d) < 1e-300) or not np.all(np.isfinite(d)):
            raise IntegrationError("frame degenerated during re-orthonormalization")
        sign = np.sign(d)
        self.Q = q * sign[:, None, :]
        self.log_r += np.log(np.abs(d))
        self.tau_elapsed += dtau


@dataclass(frozen=True)
class LyapunovResult:
    exponents: np.ndarray  # sorted descending, ensemble mean
    ci: np.ndarray  # 95% half-widths
    per_path: np.ndarray  # (paths, n)
    total: float  # sum of the mean exponents
    tau_measured: float


def lyapunov_spectrum(
    n: int,
    tau_end: float,
    dtau: float,
    reorth_every: int = 10,
    rng: RngLike = 0,
    n_paths: int = 16,
    burn_in: float = 5.0,
) -> LyapunovResult:
    """QR estimate of the Lyapunov spectrum of the flow.

    The singular values of F_tau = A_1 ... A_k coincide with those of
    A_k^T ... A_1^T, so the frame is pushed forward by the transposed steps.
    Independent paths give the confidence intervals.
    """
    if tau_end <= burn_in:
        raise ParameterError("tau_end must exceed the burn-in")
    if reorth_every < 1:
        raise ParameterError("reorth_every must be >= 1")
    n_steps = int(round(tau_end / dtau))
    n_burn = int(round(burn_in / dtau))
    basis = make_basis(n)
    fac = as_factory(rng)
    gen = fac.generator(0)
    eye = np.broadcast_to(np.eye(n), (n_paths, n, n))
    acc = LyapunovAccumulator(eye.copy(), np.zeros((n_paths, n)))
    prod = eye.copy()
    since = 0
    for s in range(1, n_steps + 1):
        A = expm_sl(sample_matrices(basis, dtau, gen, n_paths))
        prod = np.swapaxes(A, -1, -2) @ prod
        since += 1
        if since == reorth_every or s == n_steps or s == n_burn:
            acc.absorb(prod, since * dtau)
            prod = eye.copy()
            since = 0
            if s == n_burn:
                acc.log_r[:] = 0.0
                acc.tau_elapsed = 0.0
    per_path = np.sort(acc.log_r / acc.tau_elapsed, axis=1)[:, ::-1]
    means = per_path.mean(axis=0)
    ci = 1.96 * per_path.std(axis=0, ddof=1) / math.sqrt(n_paths) if n_paths > 1 else np.full(n, np.inf)
    return LyapunovResult(means, ci, per_path, float(means.sum()), acc.tau_elapsed)


__all__ = [
    "FlowEnsemble",
    "FlowState",
    "FrobeniusMoment",
    "LyapunovAccumulator",
    "LyapunovResult",
    "SlBasis",
    "expm_sl",
    "expm_sl2",
    "frobenius_moment",
    "frobenius_sq",
    "lyapunov_spectrum",
    "simulate_ensemble",
    "step",
    "step_matrices",
    "two_parameter_increment",
]
