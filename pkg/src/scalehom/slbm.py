"""The invariant Brownian motion on sl(n).

The law is fixed by conjugation invariance together with E B^2 = 0 and
E B B* = tau Id.  It is realized as ``sigma_sym * X_sym + sigma_skew * X_skew``
over Frobenius-orthonormal bases of trace-free symmetric and skew matrices.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ParameterError
from .harness.rng import RngLike, StreamFactory, as_factory
from .harness.stats import MomentEstimate, batch_means_ci


@dataclass(frozen=True)
class SlBasis:
    n: int
    sym0_basis: np.ndarray  # (n(n+1)/2 - 1, n, n)
    skew_basis: np.ndarray  # (n(n-1)/2, n, n)
    sigma_sym: float
    sigma_skew: float

    @property
    def colored(self) -> np.ndarray:
        """All basis elements scaled by their amplitude, stacked."""
        return np.concatenate(
            [self.sigma_sym * self.sym0_basis, self.sigma_skew * self.skew_basis], axis=0
        )


@dataclass(frozen=True)
class SlIncrement:
    matrix: np.ndarray
    dtau: float


def sym0_basis(n: int) -> np.ndarray:
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            e = np.zeros((n, n))
            e[i, j] = e[j, i] = 1.0 / math.sqrt(2.0)
            out.append(e)
    # Helmert-type trace-free diagonals
    for k in range(1, n):
        d = np.zeros(n)
        d[:k] = 1.0
        d[k] = -float(k)
        out.append(np.diag(d / math.sqrt(k * (k + 1))))
    return np.array(out)


def skew_basis(n: int) -> np.ndarray:
    out = []
    for i in range(n):
        for j in range(i + 1, n):
            e = np.zeros((n, n))
            e[i, j] = 1.0 / math.sqrt(2.0)
            e[j, i] = -1.0 / math.sqrt(2.0)
            out.append(e)
    return np.array(out).reshape(-1, n, n)


def amplitudes_from_basis(sym: np.ndarray, skew: np.ndarray) -> tuple[float, float]:
    """Solve E X_sym^2 = Id/2 and -E X_skew^2 = Id/2 from the basis square sums."""
    n = sym.shape[-1]
    ssum = np.einsum("aij,ajk->ik", sym, sym)
    c_sym = np.trace(ssum) / n
    out_skew = math.inf
    if len(skew):
        ksum = np.einsum("aij,ajk->ik", skew, skew)
        c_skew = np.trace(ksum) / n
        out_skew = -0.5 / c_skew
    return 0.5 / c_sym, out_skew


def make_basis(n: int) -> SlBasis:
    """Orthonormal bases and amplitudes; the closed forms are re-derived and checked."""
    if int(n) != n or n < 2:
        raise ParameterError("n must be an integer >= 2")
    n = int(n)
    sym = sym0_basis(n)
    skw = skew_basis(n)
    s2_sym, s2_skew = amplitudes_from_basis(sym, skw)
    closed_sym = n / ((n - 1) * (n + 2))
    closed_skew = 1.0 / (n - 1)
    if abs(s2_sym - closed_sym) > 1e-10 or abs(s2_skew - closed_skew) > 1e-10:
        raise RuntimeError("basis square sums disagree with the closed-form amplitudes")
    return SlBasis(n, sym, skw, math.sqrt(closed_sym), math.sqrt(closed_skew))


def sample_matrices(basis: SlBasis, dtau: float, rng: np.random.Generator, size: int) -> np.ndarray:
    """Draw ``size`` independent increments over ``dtau`` as an array (size, n, n)."""
    if not dtau > 0:
        raise ParameterError("dtau must be positive")
    col = basis.colored
    g = rng.standard_normal((size, col.shape[0]))
    return math.sqrt(dtau) * np.einsum("sa,aij->sij", g, col)


def sample_increment(basis: SlBasis, dtau: float, rng: np.random.Generator) -> SlIncrement:
    return SlIncrement(sample_matrices(basis, dtau, rng, 1)[0], float(dtau))


def frobenius_pair(G: np.ndarray, B: np.ndarray) -> np.ndarray:
    """G.B = tr(G^T B), broadcast over leading axes of B."""
    return np.einsum("ij,...ij->...", G, B)


def symmetric_form_value(G, tau: float) -> float:
    """E (G.B_tau)^2 for n = 2 and symmetric G: tau/4 ((tr G)^2 - 4 det G)."""
    G = np.asarray(G, dtype=float)
    if G.shape != (2, 2):
        raise ParameterError("symmetric form is defined for 2x2 matrices")
    if not np.allclose(G, G.T, atol=1e-14, rtol=0):
        raise ParameterError("G must be symmetric")
    return 0.25 * tau * (np.trace(G) ** 2 - 4.0 * np.linalg.det(G))


def sample_at(basis: SlBasis, tau: float, n_samples: int, rng: RngLike, chunk: int = 1 << 14) -> np.ndarray:
    """``n_samples`` draws of B_tau, chunked onto fixed streams."""
    fac = as_factory(rng)
    if tau == 0:
        return np.zeros((n_samples, basis.n, basis.n))
    parts = []
    for c, start in enumerate(range(0, n_samples, chunk)):
        size = min(chunk, n_samples - start)
        parts.append(sample_matrices(basis, tau, fac.generator(c), size))
    return np.concatenate(parts, axis=0)


@dataclass
class CovarianceReport:
    n: int
    tau: float
    n_samples: int
    bb: list[list[MomentEstimate]]
    bbt: list[list[MomentEstimate]]
    cross: MomentEstimate
    flags: list[str]

    def rows(self) -> list[dict]:
        out = []
        for name, table in (("E[B B]", self.bb), ("E[B B^T]", self.bbt)):
            for i in range(self.n):
                for j in range(self.n):
                    e = table[i][j]
                    out.append({"moment": name, "i": i, "j": j, "value": e.value, "ci": e.half_width})
        out.append({"moment": "E[(G.B)(G'.B)]", "i": -1, "j": -1,
                    "value": self.cross.value, "ci": self.cross.half_width})
        return out


def _zero_estimate(n_samples: int) -> MomentEstimate:
    return MomentEstimate(0.0, 0.0, n_samples, "batch-means", 32)


def covariance_report(basis: SlBasis, tau: float, n_samples: int, rng: RngLike,
                      G=None, G_skew=None) -> CovarianceReport:
    """Empirical E B^2, E B B^T and a sym/skew cross moment with 95% intervals.

    Entries deviating from the exact targets (0 and tau Id) by more than four
    standard errors are listed in ``flags``.
    """
    if n_samples < 1000:
        raise ParameterError("covariance_report needs at least 10^3 samples")
    if tau < 0:
        raise ParameterError("tau must be non-negative")
    n = basis.n
    if G is None:
        G = basis.sym0_basis[0]
    if G_skew is None:
        G_skew = basis.skew_basis[0]
    if tau == 0:
        z = [[_zero_estimate(n_samples) for _ in range(n)] for _ in range(n)]
        return CovarianceReport(n, 0.0, n_samples, z, [row[:] for row in z], _zero_estimate(n_samples), [])
    B = sample_at(basis, tau, n_samples, rng)
    bb = B @ B
    bbt = B @ np.swapaxes(B, -1, -2)
    flags = []
    tables = []
    for name, arr, target in (("BB", bb, np.zeros((n, n))), ("BBt", bbt, tau * np.eye(n))):
        table = []
        for i in range(n):
            row = []
            for j in range(n):
                e = batch_means_ci(arr[:, i, j])
                if abs(e.value - target[i, j]) > 4.0 * e.stderr + 1e-15:
                    flags.append(f"{name}[{i},{j}]")
                row.append(e)
            table.append(row)
        tables.append(table)
    cross = batch_means_ci(frobenius_pair(np.asarray(G), B) * frobenius_pair(np.asarray(G_skew), B))
    if abs(cross.value) > 4.0 * cross.stderr:
        flags.append("cross")
    return CovarianceReport(n, float(tau), n_samples, tables[0], tables[1], cross, flags)


__all__ = [
    "CovarianceReport",
    "SlBasis",
    "SlIncrement",
    "StreamFactory",
    "covariance_report",
    "frobenius_pair",
    "make_basis",
    "sample_at",
    "sample_increment",
    "sample_matrices",
    "symmetric_form_value",
]
