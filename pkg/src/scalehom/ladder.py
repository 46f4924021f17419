"""Scale discretization and the deterministic effective-diffusivity functions.

The effective diffusivity at length scale L is ``lt(L) = sqrt(1 + eps^2 ln L)``
and the intrinsic clock is ``tau = ln lt``.  The time-domain diffusivity is
``lam(s) = sqrt(1 + eps^2/2 ln(1 + s))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from scipy import integrate

from .errors import ParameterError

Spacing = Literal["uniform-in-tau", "geometric-in-L"]


def _check_finite(**kwargs: float) -> None:
    for name, value in kwargs.items():
        if not np.isfinite(value):
            raise ParameterError(f"{name} must be finite, got {value!r}")


def lambda_tilde(L, epsilon: float):
    """Effective diffusivity sqrt(1 + eps^2 ln L) at scale L >= 1."""
    L = np.asarray(L, dtype=float)
    return np.sqrt(1.0 + epsilon**2 * np.log(L))


def log_scale_of_lambda(lt, epsilon: float):
    """Inverse of :func:`lambda_tilde` in log form: returns ln L."""
    lt = np.asarray(lt, dtype=float)
    return (lt - 1.0) * (lt + 1.0) / epsilon**2


def scale_of_lambda(lt, epsilon: float):
    return np.exp(log_scale_of_lambda(lt, epsilon))


def tau_of_scale(L, epsilon: float):
    # 0.5 * log1p keeps full precision for small eps^2 ln L
    return 0.5 * np.log1p(epsilon**2 * np.log(np.asarray(L, dtype=float)))


@dataclass(frozen=True)
class ScaleLadder:
    """Discrete scale grid ``1 = L_0 < ... < L_J`` with lambdas and taus.

    Immutable; the arrays are flagged read-only so a ladder can be shared.
    """

    epsilon: float
    levels: np.ndarray
    lambdas: np.ndarray
    taus: np.ndarray
    spacing: str = "uniform-in-tau"
    log_levels: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.log_levels is None:
            object.__setattr__(self, "log_levels", np.log(self.levels))
        for name in ("levels", "lambdas", "taus", "log_levels"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def J(self) -> int:
        return len(self.levels) - 1

    @property
    def dtaus(self) -> np.ndarray:
        return np.diff(self.taus)

    def shells(self) -> list[tuple[float, float]]:
        """Half-open scale intervals (L_j, L_{j+1}]."""
        return [(float(a), float(b)) for a, b in zip(self.levels[:-1], self.levels[1:])]

    def to_dict(self) -> dict:
        return {
            "epsilon": self.epsilon,
            "spacing": self.spacing,
            "levels": [float(x) for x in self.levels],
            "lambdas": [float(x) for x in self.lambdas],
            "taus": [float(x) for x in self.taus],
        }


def make_ladder(
    epsilon: float,
    L_max: float,
    J: int,
    spacing: Spacing = "uniform-in-tau",
) -> ScaleLadder:
    """Build a ladder of J shells from L = 1 to L = L_max.

    ``uniform-in-tau`` spaces the levels evenly in the intrinsic clock,
    ``geometric-in-L`` evenly in ln L.  ``epsilon = 0`` is only meaningful with
    geometric spacing (the clock does not advance).
    """
    _check_finite(epsilon=epsilon, L_max=L_max)
    if not 0.0 <= epsilon <= 1.0:
        raise ParameterError(f"epsilon must lie in (0, 1], got {epsilon}")
    if L_max < 1.0:
        raise ParameterError(f"L_max must be >= 1, got {L_max}")
    if int(J) != J or J < 1:
        raise ParameterError(f"J must be a positive integer, got {J}")
    J = int(J)
    log_Lmax = math.log(L_max)

    if spacing == "uniform-in-tau":
        if epsilon == 0.0:
            raise ParameterError("uniform-in-tau spacing needs epsilon > 0")
        tau_max = 0.5 * math.log1p(epsilon**2 * log_Lmax)
        taus = tau_max * np.arange(J + 1) / J
        lambdas = np.exp(taus)
        log_levels = log_scale_of_lambda(lambdas, epsilon)
        log_levels[0] = 0.0
        log_levels[-1] = log_Lmax
    elif spacing == "geometric-in-L":
        log_levels = log_Lmax * np.arange(J + 1) / J
        lambdas = np.sqrt(1.0 + epsilon**2 * log_levels)
        taus = 0.5 * np.log1p(epsilon**2 * log_levels)
    else:
        raise ParameterError(f"unknown spacing {spacing!r}")

    levels = np.exp(log_levels)
    levels[-1] = L_max
    return ScaleLadder(
        epsilon=float(epsilon),
        levels=levels,
        lambdas=lambdas,
        taus=taus,
        spacing=spacing,
        log_levels=log_levels,
    )


def integrate_lambda_ode(epsilon: float, L_max: float, step_count: int) -> float:
    """Integrate d lt / d ln L = eps^2 / (2 lt) from lt = 1 with explicit midpoint.

    Second order in the step; only used to cross-check the closed form.
    """
    _check_finite(epsilon=epsilon, L_max=L_max)
    if step_count < 1:
        raise ParameterError("step_count must be >= 1")
    if L_max < 1.0 or epsilon < 0.0:
        raise ParameterError("need L_max >= 1 and epsilon >= 0")
    h = math.log(L_max) / step_count
    e2 = epsilon**2
    lt = 1.0
    for _ in range(step_count):
        mid = lt + 0.5 * h * e2 / (2.0 * lt)
        lt = lt + h * e2 / (2.0 * mid)
    return lt


def lambda_of_time(s, epsilon: float):
    """Time-domain diffusivity sqrt(1 + eps^2/2 ln(1 + s)) for s >= 0."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0) or not np.all(np.isfinite(s_arr)):
        raise ParameterError("s must be finite and non-negative")
    out = np.sqrt(1.0 + 0.5 * epsilon**2 * np.log1p(s_arr))
    return float(out) if out.ndim == 0 else out


def tau_of_time(s, epsilon: float):
    """Clock ln lam(s)."""
    s_arr = np.asarray(s, dtype=float)
    if np.any(s_arr < 0):
        raise ParameterError("s must be non-negative")
    out = 0.5 * np.log1p(0.5 * epsilon**2 * np.log1p(s_arr))
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class EnvelopeIntegrals:
    """The three scale integrals plus their ratios to the reference envelopes.

    ``C1 = I1 / (eps^2 (L*/lt*)^2)``, ``C2 = I2 / (eps^2 / L*^p)``,
    ``C3 = I3 * lt*^p``.  Raw values overflow for large tau*, so logs are kept.
    """

    tau_star: float
    p: float
    epsilon: float
    log_I1: float
    log_I2: float
    log_I3: float
    C1: float
    C2: float
    C3: float

    @property
    def I1(self) -> float:
        return math.exp(self.log_I1) if self.log_I1 < 700 else math.inf

    @property
    def I2(self) -> float:
        return math.exp(self.log_I2) if self.log_I2 > -745 else 0.0

    @property
    def I3(self) -> float:
        return math.exp(self.log_I3)


def _quad(f, a, b, width):
    """Adaptive quadrature with a refined window of size ~width at the peak end."""
    kw = dict(epsabs=1e-14, epsrel=1e-12, limit=400)
    total = 0.0
    if math.isinf(b):
        cut = a + 60.0 * width
        total += integrate.quad(f, a, cut, **kw)[0]
        total += integrate.quad(f, cut, math.inf, **kw)[0]
        return total
    cut = max(a, b - 60.0 * width)
    if cut > a:
        total += integrate.quad(f, a, cut, **kw)[0]
    total += integrate.quad(f, cut, b, **kw)[0]
    return total


def envelope_integrals(tau_star: float, p: float, epsilon: float) -> EnvelopeIntegrals:
    """Evaluate the three scale integrals by quadrature in the clock variable.

    The integration variable is the offset ``s = tau - tau*`` so that the
    super-exponential growth of L(tau) is resolved without cancellation.
    """
    _check_finite(tau_star=tau_star, p=p, epsilon=epsilon)
    if p <= 0:
        raise ParameterError("p must be positive")
    if tau_star < 0:
        raise ParameterError("tau_star must be non-negative")
    if not 0 < epsilon <= 1:
        raise ParameterError("epsilon must lie in (0, 1]")
    e2 = epsilon**2
    g = math.exp(2.0 * tau_star)
    log_Ls = (g - 1.0) / e2

    def dlogL(s):
        # ln L(tau* + s) - ln L*
        if s > 350.0:
            return math.inf
        return g * math.expm1(2.0 * s) / e2

    def safe_exp(x):
        return math.exp(x) if x > -745.0 else 0.0

    # e-folding width of L^2 in tau at tau*
    width = e2 / (4.0 * g)

    # C1: int_{-tau*}^0 exp(2 dlogL(s) - p s + 2 tau*) ds / eps^2
    if tau_star == 0.0:
        C1 = 0.0
    else:
        C1 = _quad(lambda s: safe_exp(2.0 * dlogL(s) - p * s + 2.0 * tau_star), -tau_star, 0.0, width) / e2
    # C2: int_0^inf exp(2 (tau* + s) - p dlogL(s)) ds / eps^2
    C2 = _quad(lambda s: safe_exp(2.0 * (tau_star + s) - p * dlogL(s)), 0.0, math.inf, 2.0 * width / p) / e2
    # C3: int_0^inf exp(-p s) ds, times lt*^p / lt*^p
    C3 = integrate.quad(lambda s: math.exp(-p * s), 0.0, math.inf, epsabs=0.0, epsrel=1e-13)[0]

    log_I1 = (math.log(C1) + math.log(e2) + 2.0 * log_Ls - 2.0 * tau_star) if C1 > 0 else -math.inf
    log_I2 = math.log(C2) + math.log(e2) - p * log_Ls
    log_I3 = math.log(C3) - p * tau_star
    return EnvelopeIntegrals(
        tau_star=float(tau_star), p=float(p), epsilon=float(epsilon),
        log_I1=log_I1, log_I2=log_I2, log_I3=log_I3, C1=C1, C2=C2, C3=C3,
    )
