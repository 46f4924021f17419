"""Scalar reductions of the n = 2 flow.

R = |F|^2 / 2 solves dR = R dtau + sqrt(R^2 - 1) dw; S = exp(arccosh R) is the
squared top singular value and U = ln S solves dU = coth(U)/2 dtau + dw.  The
comparison process is Q = exp(tau/2 + w).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .errors import ParameterError
from .flow import FlowEnsemble, frobenius_sq
from .harness.rng import RngLike, as_factory, chunk_bounds
from .harness.stats import MomentEstimate, batch_means_ci, ratio_ci

PATH_CHUNK = 8192


@dataclass
class ScalarPath:
    """Ensemble of scalar paths: ``values[t, p]`` at ``tau_grid[t]``."""

    kind: Literal["R", "S", "Q"]
    tau_grid: np.ndarray
    values: np.ndarray
    seed: int | None = None
    meta: dict = field(default_factory=dict)

    def at(self, tau: float) -> np.ndarray:
        hits = np.nonzero(np.isclose(self.tau_grid, tau, rtol=0, atol=1e-9))[0]
        if hits.size == 0:
            raise ParameterError(f"tau={tau} not on the stored grid")
        return self.values[int(hits[0])]


def _grid(tau_end: float, dtau: float) -> tuple[int, float]:
    if not tau_end > 0 or not dtau > 0:
        raise ParameterError("need tau_end > 0 and dtau > 0")
    n = int(round(tau_end / dtau))
    if not math.isclose(n * dtau, tau_end, rel_tol=1e-9):
        raise ParameterError("tau_end must be an integer multiple of dtau")
    return n, float(dtau)


def _record_steps(n_steps: int, record_every: int) -> np.ndarray:
    steps = np.arange(0, n_steps + 1, record_every)
    if steps[-1] != n_steps:
        steps = np.append(steps, n_steps)
    return steps


def simulate_r(tau_end: float, dtau: float, n_paths: int, rng: RngLike = 0,
               record_every: int = 1, scheme: Literal["euler", "milstein"] = "euler") -> ScalarPath:
    """Time-step R from R = 1 with a post-step floor at 1.

    ``euler`` is Euler-Maruyama on the Ito form.  ``milstein`` adds the
    R (dw^2 - dtau) / 2 correction (sigma sigma' = R), which keeps the step
    above 1 near the boundary and makes floor activations rare.  The number of
    floor activations is kept in ``meta``.
    """
    if scheme not in ("euler", "milstein"):
        raise ParameterError(f"unknown scheme {scheme!r}")
    mil = scheme == "milstein"
    n_steps, dt = _grid(tau_end, dtau)
    fac = as_factory(rng)
    steps = _record_steps(n_steps, record_every)
    rec = set(steps.tolist())
    out = np.empty((len(steps), n_paths))
    floors = 0
    sq = math.sqrt(dt)
    for c, (a, b) in enumerate(chunk_bounds(n_paths, PATH_CHUNK)):
        gen = fac.generator(c)
        R = np.ones(b - a)
        row = 0
        out[row, a:b] = R
        row += 1
        for s in range(1, n_steps + 1):
            dw = sq * gen.standard_normal(b - a)
            nxt = R + R * dt + np.sqrt(np.maximum(R * R - 1.0, 0.0)) * dw
            if mil:
                nxt += 0.5 * R * (dw * dw - dt)
            R = nxt
            low = R < 1.0
            floors += int(low.sum())
            R[low] = 1.0
            if s in rec:
                out[row, a:b] = R
                row += 1
    return ScalarPath("R", steps * dt, out, fac.seed,
                      {"floor_activations": floors, "path_steps": n_paths * n_steps, "scheme": scheme})


def r_from_flow(ensemble: FlowEnsemble) -> ScalarPath:
    """R = |F|^2 / 2 at every stored snapshot of an n = 2 flow ensemble."""
    if ensemble.n != 2:
        raise ParameterError("the scalar reduction needs n = 2")
    vals = 0.5 * frobenius_sq(ensemble.snapshots)
    return ScalarPath("R", ensemble.times.copy(), vals, ensemble.meta.get("seed"))


def s_of_r(R):
    R = np.asarray(R, dtype=float)
    if np.any(R < 1.0):
        raise ParameterError("R must be >= 1")
    # exp(arccosh R) = R + sqrt(R^2 - 1)
    return R + np.sqrt((R - 1.0) * (R + 1.0))


def r_of_s(S):
    S = np.asarray(S, dtype=float)
    return 0.5 * (S + 1.0 / S)


def s_from_r(path: ScalarPath) -> ScalarPath:
    if path.kind != "R":
        raise ParameterError("s_from_r expects an R path")
    return ScalarPath("S", path.tau_grid.copy(), s_of_r(path.values), path.seed)


def top_singular_sq(F: np.ndarray) -> np.ndarray:
    """Largest eigenvalue of F^T F for 2x2 matrices (closed-form eigensolve)."""
    C = np.swapaxes(F, -1, -2) @ F
    tr = C[..., 0, 0] + C[..., 1, 1]
    det = C[..., 0, 0] * C[..., 1, 1] - C[..., 0, 1] * C[..., 1, 0]
    return 0.5 * tr + np.sqrt(np.maximum(0.25 * tr * tr - det, 0.0))


def _implicit_u_step(c: np.ndarray, dt: float) -> np.ndarray:
    """Solve U - dt/2 coth U = c for U > 0.

    The map is increasing and concave, so Newton from a point below the root
    increases monotonically toward it.  The root is >= c + dt/2 because
    coth >= 1, and that bound is used as the start whenever it is positive.
    """
    half = 0.5 * dt
    lower = c + half
    # where c + dt/2 <= 0 use the root of U - dt/(2U) = c, also below the root
    start = np.where(lower > 0, lower, 0.5 * (c + np.sqrt(c * c + 2.0 * dt)))
    U = start
    for _ in range(60):
        th = np.tanh(U)
        g = U - half / th - c
        dg = 1.0 + half * (1.0 - th * th) / (th * th)
        nxt = np.maximum(U - g / dg, U)
        if np.all(np.abs(nxt - U) <= 1e-15 * np.maximum(1.0, U)):
            U = nxt
            break
        U = nxt
    return np.maximum(U, lower)


def simulate_s(tau_end: float, dtau: float, n_paths: int, rng: RngLike = 0,
               record_every: int = 1) -> ScalarPath:
    """Direct simulation of S through U = ln S with a drift-implicit step."""
    trip = simulate_coupled(tau_end, dtau, n_paths, rng, record_every)
    return trip["S"]


def simulate_coupled(tau_end: float, dtau: float, n_paths: int, rng: RngLike = 0,
                     record_every: int = 1) -> dict[str, ScalarPath]:
    """Coupled (R, S, Q) driven by one Brownian path w per triple.

    U = ln S follows dU = coth(U)/2 dtau + dw, stepped drift-implicitly so that
    U_{k+1} >= U_k + dw + dtau/2.  ln Q is accumulated with the same additions,
    which makes S >= Q hold exactly in floating point; 2R = S + 1/S >= S.
    """
    n_steps, dt = _grid(tau_end, dtau)
    fac = as_factory(rng)
    steps = _record_steps(n_steps, record_every)
    rec = set(steps.tolist())
    U_out = np.empty((len(steps), n_paths))
    L_out = np.empty((len(steps), n_paths))
    sq = math.sqrt(dt)
    for c, (a, b) in enumerate(chunk_bounds(n_paths, PATH_CHUNK)):
        gen = fac.generator(c)
        U = np.zeros(b - a)
        lnQ = np.zeros(b - a)
        row = 0
        U_out[row, a:b] = U
        L_out[row, a:b] = lnQ
        row += 1
        for s in range(1, n_steps + 1):
            dw = sq * gen.standard_normal(b - a)
            U = _implicit_u_step(U + dw, dt)
            lnQ = (lnQ + dw) + 0.5 * dt
            if s in rec:
                U_out[row, a:b] = U
                L_out[row, a:b] = lnQ
                row += 1
    taus = steps * dt
    S = np.exp(U_out)
    R = 0.5 * (S + 1.0 / S)
    return {
        "R": ScalarPath("R", taus, R, fac.seed),
        "S": ScalarPath("S", taus, S, fac.seed),
        "Q": ScalarPath("Q", taus.copy(), np.exp(L_out), fac.seed),
    }


def domination_violations(trip: dict[str, ScalarPath]) -> int:
    """Number of (time, path) grid points where 2R >= S >= Q fails."""
    R, S, Q = trip["R"].values, trip["S"].values, trip["Q"].values
    return int(np.count_nonzero(~((2.0 * R >= S) & (S >= Q))))


def simulate_q(tau_grid, n_paths: int, rng: RngLike = 0, w: np.ndarray | None = None) -> ScalarPath:
    """Exact samples of Q = exp(tau/2 + w_tau) on an arbitrary increasing grid.

    ``w`` may supply the Brownian path (shape (len(grid), n_paths)) to couple
    with another process.
    """
    taus = np.asarray(tau_grid, dtype=float)
    if taus.ndim != 1 or np.any(np.diff(taus) <= 0) or taus[0] < 0:
        raise ParameterError("tau_grid must be non-negative and strictly increasing")
    fac = as_factory(rng)
    if w is None:
        dts = np.diff(np.concatenate([[0.0], taus]))
        w = np.empty((taus.size, n_paths))
        for c, (a, b) in enumerate(chunk_bounds(n_paths, PATH_CHUNK)):
            g = fac.generator(c).standard_normal((taus.size, b - a))
            w[:, a:b] = np.cumsum(g * np.sqrt(dts)[:, None], axis=0)
    return ScalarPath("Q", taus, np.exp(0.5 * taus[:, None] + w), fac.seed)


@dataclass(frozen=True)
class TailRatio:
    ratio: MomentEstimate
    threshold: float
    mean: float


def tail_mass_ratio(Z, c: float = 1.0, exponent: float = 1.5, mean: float | None = None) -> TailRatio:
    """E[Z 1(Z >= c (EZ)^exponent)] / E Z with a batch-ratio interval.

    ``mean`` replaces the empirical E Z in the threshold when it is known.
    """
    z = np.asarray(Z, dtype=float).ravel()
    if z.size == 0:
        raise ParameterError("empty ensemble")
    m = float(z.mean()) if mean is None else float(mean)
    thr = c * m**exponent
    num = z * (z >= thr)
    if np.ptp(z) == 0.0:
        r = float(num.mean() / z.mean())
        return TailRatio(MomentEstimate(r, 0.0, z.size, "exact"), thr, m)
    return TailRatio(ratio_ci(num, z), thr, m)


def moment(path: ScalarPath, tau: float, p: int = 1) -> MomentEstimate:
    return batch_means_ci(path.at(tau) ** p)


__all__ = [
    "ScalarPath",
    "TailRatio",
    "domination_violations",
    "moment",
    "r_from_flow",
    "r_of_s",
    "s_from_r",
    "s_of_r",
    "simulate_coupled",
    "simulate_q",
    "simulate_r",
    "simulate_s",
    "tail_mass_ratio",
    "top_singular_sq",
]
