"""Anisotropic effective-diffusivity flow d a/d tau = f(a) - a.

f(a) = n/(n-1) * avg_k (k.a k)^{-1} (I - k k^T) over the unit sphere with the
normalized measure, so that f(I) = I and f(s a) = f(a)/s.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import integrate
from scipy.stats import qmc

from .errors import IntegrationError, ParameterError

COND_LIMIT = 1e12


@dataclass(frozen=True)
class SphereQuadrature:
    nodes: np.ndarray  # (q, n) unit vectors
    weights: np.ndarray  # (q,), sum 1
    kind: str

    @property
    def n(self) -> int:
        return self.nodes.shape[1]

    def second_moment(self) -> np.ndarray:
        return np.einsum("q,qi,qj->ij", self.weights, self.nodes, self.nodes)


def make_quadrature(n: int, order: int | None = None, seed: int = 0) -> SphereQuadrature:
    """Uniform angles for n = 2, Lebedev for n = 3, scrambled Sobol otherwise.

    ``order`` is the number of angles (n = 2), the Lebedev degree (n = 3) or
    the point count (n >= 4).
    """
    if n == 2:
        q = 512 if order is None else int(order)
        th = 2.0 * math.pi * np.arange(q) / q
        nodes = np.stack([np.cos(th), np.sin(th)], axis=1)
        return SphereQuadrature(nodes, np.full(q, 1.0 / q), "uniform-angle")
    if n == 3:
        deg = 31 if order is None else int(order)
        if deg < 17:
            raise ParameterError("Lebedev degree must be at least 17")
        x, w = integrate.lebedev_rule(deg)
        return SphereQuadrature(x.T.copy(), w / w.sum(), f"lebedev-{deg}")
    if n >= 4:
        m = 1 << 14 if order is None else int(order)
        u = qmc.Sobol(n, scramble=True, seed=seed).random(m)
        from scipy.stats import norm

        g = norm.ppf(np.clip(u, 1e-12, 1 - 1e-12))
        nodes = g / np.linalg.norm(g, axis=1, keepdims=True)
        return SphereQuadrature(nodes, np.full(m, 1.0 / m), "sobol")
    raise ParameterError("n must be >= 2")


def _check_spd(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ParameterError("a must be a square matrix")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12 * max(1.0, np.abs(a).max())):
        raise ParameterError("a must be symmetric")
    ev = np.linalg.eigvalsh(a)
    if ev[0] <= 0:
        raise ParameterError("a must be positive definite")
    if ev[-1] / ev[0] > COND_LIMIT:
        raise ParameterError("a is too ill-conditioned")
    return a


def f_of_a(a, quad: SphereQuadrature) -> np.ndarray:
    a = _check_spd(a)
    n = a.shape[0]
    if quad.n != n:
        raise ParameterError("quadrature dimension mismatch")
    k = quad.nodes
    w = quad.weights / np.einsum("qi,ij,qj->q", k, a, k)
    proj = np.eye(n) * w.sum() - np.einsum("q,qi,qj->ij", w, k, k)
    out = n / (n - 1) * proj
    return 0.5 * (out + out.T)


def f_diag_2d(alpha: float, beta: float) -> np.ndarray:
    """Closed form of f(diag(alpha, beta)) in two dimensions."""
    sa, sb = math.sqrt(alpha), math.sqrt(beta)
    return np.diag([2.0 / (sb * (sa + sb)), 2.0 / (sa * (sa + sb))])


def df_identity(adot, n: int | None = None) -> np.ndarray:
    """Analytic derivative of f at the identity in direction ``adot``."""
    adot = np.asarray(adot, dtype=float)
    n = adot.shape[0] if n is None else n
    c1 = 2.0 / ((n - 1) * (n + 2))
    c2 = (n + 1) / ((n - 1) * (n + 2))
    return c1 * adot - c2 * np.trace(adot) * np.eye(n)


def df_identity_fd(adot, quad: SphereQuadrature, h: float = 1e-4) -> np.ndarray:
    adot = np.asarray(adot, dtype=float)
    eye = np.eye(adot.shape[0])
    return (f_of_a(eye + h * adot, quad) - f_of_a(eye - h * adot, quad)) / (2.0 * h)


@dataclass
class Trajectory:
    taus: np.ndarray
    states: np.ndarray  # (steps+1, n, n)
    halvings: int = 0

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.states)

    def distance_to_identity(self) -> np.ndarray:
        n = self.states.shape[-1]
        return np.linalg.norm(self.states - np.eye(n), axis=(1, 2))


def _rhs(a, quad):
    return f_of_a(a, quad) - a


def _rk4(a, h, quad):
    k1 = _rhs(a, quad)
    k2 = _rhs(a + 0.5 * h * k1, quad)
    k3 = _rhs(a + 0.5 * h * k2, quad)
    k4 = _rhs(a + h * k3, quad)
    out = a + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return 0.5 * (out + out.T)


def flow_integrate(a0, dtau: float, tau_end: float, quad: SphereQuadrature) -> Trajectory:
    """Classical RK4 with symmetry projection; halves the step on loss of SPD."""
    a = _check_spd(a0)
    if not 0 < dtau <= 0.05:
        raise ParameterError("dtau must lie in (0, 0.05]")
    n_steps = int(round(tau_end / dtau))
    taus = [0.0]
    states = [a.copy()]
    halvings = 0
    for s in range(n_steps):
        h, sub, done = dtau, 1, False
        for attempt in range(9):
            try:
                b = a
                for _ in range(sub):
                    b = _rk4(b, h, quad)
                    _check_spd(b)
                done = True
                break
            except ParameterError:
                h, sub = h / 2.0, sub * 2
                halvings += 1
        if not done:
            raise IntegrationError("lost positive definiteness after 8 step halvings")
        a = b
        taus.append((s + 1) * dtau)
        states.append(a.copy())
    return Trajectory(np.array(taus), np.array(states), halvings)


def decay_rate(traj: Trajectory, tau_lo: float, tau_hi: float) -> float:
    """Exponential rate of |a - I| fitted on [tau_lo, tau_hi]."""
    sel = (traj.taus >= tau_lo) & (traj.taus <= tau_hi)
    d = traj.distance_to_identity()[sel]
    if sel.sum() < 4 or np.any(d <= 0):
        raise ParameterError("fit window has too few usable points")
    slope = np.polyfit(traj.taus[sel], np.log(d), 1)[0]
    return float(-slope)


def fences(mu_min0: float, mu_max0: float, taus) -> tuple[np.ndarray, np.ndarray]:
    """Solutions of the comparison ODEs bounding the extreme eigenvalues.

    y' = theta/y - y and z' = 1/(theta z) - z with theta = mu_min0/mu_max0, so
    y^2 = theta + (y0^2 - theta) e^{-2 tau} and likewise for z.
    """
    theta = mu_min0 / mu_max0
    e = np.exp(-2.0 * np.asarray(taus, dtype=float))
    lo = np.sqrt(theta + (mu_min0**2 - theta) * e)
    hi = np.sqrt(1.0 / theta + (mu_max0**2 - 1.0 / theta) * e)
    return lo, hi


@dataclass(frozen=True)
class MonotonicityReport:
    min_eigs: list[float]

    @property
    def ok(self) -> bool:
        return all(m > 0 for m in self.min_eigs)


def monotonicity_check(pairs, quad: SphereQuadrature) -> MonotonicityReport:
    """For pairs (a_lo, a_hi) with a_lo <= a_hi check f(a_lo) - f(a_hi) > 0."""
    out = []
    for lo, hi in pairs:
        lo = _check_spd(lo)
        hi = _check_spd(hi)
        diff = hi - lo
        ev = np.linalg.eigvalsh(0.5 * (diff + diff.T))
        scale = max(1.0, np.abs(hi).max())
        if ev[0] < -1e-12 * scale or np.abs(diff).max() <= 1e-14 * scale:
            raise ParameterError("pairs must satisfy a_lo <= a_hi with a_lo != a_hi")
        gap = f_of_a(lo, quad) - f_of_a(hi, quad)
        out.append(float(np.linalg.eigvalsh(0.5 * (gap + gap.T))[0]))
    return MonotonicityReport(out)


__all__ = [
    "MonotonicityReport",
    "SphereQuadrature",
    "Trajectory",
    "decay_rate",
    "df_identity",
    "df_identity_fd",
    "f_diag_2d",
    "f_of_a",
    "fences",
    "flow_integrate",
    "make_quadrature",
    "monotonicity_check",
]
