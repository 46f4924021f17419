"""Confidence intervals and regression helpers for Monte Carlo output."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from typing import Literal

import numpy as np
from scipy import stats

from ..errors import ParameterError

KURTOSIS_LIMIT = 100.0
MIN_BATCHES = 16


@dataclass(frozen=True)
class MomentEstimate:
    """A point estimate with a 95% confidence half-width."""

    value: float
    half_width: float
    n_samples: int
    estimator: str = "batch-means"
    batches: int = 0
    heavy_tail: bool = False

    @property
    def lo(self) -> float:
        return self.value - self.half_width

    @property
    def hi(self) -> float:
        return self.value + self.half_width

    @property
    def stderr(self) -> float:
        """Standard error implied by the half-width (normal approximation)."""
        return self.half_width / 1.959963984540054

    def covers(self, target: float) -> bool:
        return self.lo <= target <= self.hi

    def to_dict(self) -> dict:
        return asdict(self)


def _excess_kurtosis(x: np.ndarray) -> float:
    sd = x.std()
    if sd == 0.0:
        return 0.0
    return float(np.mean(((x - x.mean()) / sd) ** 4) - 3.0)


def batch_means_ci(samples, batches: int = 32, level: float = 0.95) -> MomentEstimate:
    """Batch-means estimate of the mean with a Student-t interval.

    Heavy-tailed input (excess kurtosis above 100) is flagged; for positive
    samples the interval is then widened by the log-domain spread of the batch
    means, which is more honest for lognormal-like data.
    """
    x = np.asarray(samples, dtype=float).ravel()
    if batches < MIN_BATCHES:
        raise ParameterError(f"need at least {MIN_BATCHES} batches, got {batches}")
    if x.size < batches:
        raise ParameterError(f"too few samples ({x.size}) for {batches} batches")
    if not np.all(np.isfinite(x)):
        raise ParameterError("samples contain non-finite values")
    usable = (x.size // batches) * batches
    means = x[:usable].reshape(batches, -1).mean(axis=1)
    value = float(x.mean())
    t = stats.t.ppf(0.5 + level / 2.0, batches - 1)
    spread = float(means.std(ddof=1))
    half = float(t * spread / math.sqrt(batches))
    heavy = _excess_kurtosis(x) > KURTOSIS_LIMIT
    if heavy and np.all(means > 0):
        logs = np.log(means)
        lhalf = t * logs.std(ddof=1) / math.sqrt(batches)
        half = max(half, value * math.expm1(lhalf))
    return MomentEstimate(value, half, int(x.size), "batch-means", batches, heavy)


def mean_ci(samples, level: float = 0.95) -> MomentEstimate:
    """Plain i.i.d. mean with a normal-theory interval."""
    x = np.asarray(samples, dtype=float).ravel()
    if x.size < 2:
        raise ParameterError("need at least two samples")
    z = stats.norm.ppf(0.5 + level / 2.0)
    half = float(z * x.std(ddof=1) / math.sqrt(x.size))
    return MomentEstimate(float(x.mean()), half, int(x.size), "mean")


def ratio_ci(num, den, batches: int = 32, level: float = 0.95) -> MomentEstimate:
    """Ratio of means ``E num / E den`` with a batch-means interval on batch ratios."""
    a = np.asarray(num, dtype=float).ravel()
    b = np.asarray(den, dtype=float).ravel()
    if a.shape != b.shape:
        raise ParameterError("numerator and denominator sample shapes differ")
    if a.size < batches or batches < MIN_BATCHES:
        raise ParameterError("too few samples or batches for a ratio interval")
    usable = (a.size // batches) * batches
    ra = a[:usable].reshape(batches, -1).mean(axis=1)
    rb = b[:usable].reshape(batches, -1).mean(axis=1)
    value = float(a.mean() / b.mean())
    # linearized batch ratios around the global ratio
    lin = (ra - value * rb) / b.mean()
    t = stats.t.ppf(0.5 + level / 2.0, batches - 1)
    half = float(t * lin.std(ddof=1) / math.sqrt(batches))
    return MomentEstimate(value, half, int(a.size), "batch-ratio", batches)


def bonferroni_z(m: int, level: float = 0.95) -> float:
    """Two-sided normal quantile controlling the family-wise level over m tests."""
    return float(stats.norm.ppf(1.0 - (1.0 - level) / (2.0 * max(m, 1))))


def agree(a: MomentEstimate, b: MomentEstimate, z: float = 1.959963984540054) -> bool:
    """True when two independent estimates agree within their joint interval."""
    joint = math.hypot(a.stderr, b.stderr)
    return abs(a.value - b.value) <= z * joint


@dataclass(frozen=True)
class SlopeFit:
    slope: float
    intercept: float
    stderr: float
    model: str
    n_points: int


def slope_fit(x, y, model: Literal["linear", "affine-in-log"] = "linear") -> SlopeFit:
    """Least-squares line through (x, y), or through (ln x, y) for ``affine-in-log``."""
    xa = np.asarray(x, dtype=float).ravel()
    ya = np.asarray(y, dtype=float).ravel()
    if xa.shape != ya.shape:
        raise ParameterError("x and y must have equal length")
    if xa.size < 4:
        raise ParameterError("slope_fit needs at least 4 points")
    if model == "affine-in-log":
        if np.any(xa <= 0):
            raise ParameterError("affine-in-log needs positive abscissae")
        xa = np.log(xa)
    elif model != "linear":
        raise ParameterError(f"unknown model {model!r}")
    if np.ptp(xa) == 0.0:
        raise ParameterError("degenerate abscissae")
    res = stats.linregress(xa, ya)
    stderr = float(res.stderr) if np.isfinite(res.stderr) else 0.0
    # exact fits come back with round-off sized errors; report them as zero
    resid = ya - (res.intercept + res.slope * xa)
    if np.max(np.abs(resid)) <= 1e-12 * max(1.0, float(np.max(np.abs(ya)))):
        stderr = 0.0
    return SlopeFit(float(res.slope), float(res.intercept), stderr, model, int(xa.size))
