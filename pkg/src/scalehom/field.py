"""Spectral synthesis of the divergence-free Gaussian drift and its potentials.

Fields live on the torus of period 2 pi M.  A real field is written as
``u(x) = sum_k u_hat(k) exp(i k.x)`` over wavevectors k = m / M with
0 < |m| <= M.  Only one representative of each pair {k, -k} is stored (the
"half space"); the other coefficient is the complex conjugate.

Index conventions: the stream tensor satisfies ``b^i = d_j Psi^{ij}``; the
corrector driver solves ``-lt Laplace dphi = db``; ``a e^i`` has components
``a^{ik}``; and the flux corrector has ``(div sigma^i)^k = d_l sigma^{i,kl}``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Literal, Sequence

import numpy as np
from scipy import fft as sfft

from .errors import EmptyShellError, GaugeError, ParameterError, SynthesisError
from .harness.rng import RngLike, as_factory
from .ladder import ScaleLadder

Rank = Literal["scalar", "vector", "skew-tensor", "vector-of-gradients"]


@dataclass(frozen=True)
class TorusGrid:
    """Periodic box of side 2 pi M with wavevectors m / M, |m| <= M."""

    n: int
    M: int
    real_points: int | None = None

    def __post_init__(self) -> None:
        if self.n not in (2, 3):
            raise ParameterError("n must be 2 or 3")
        if int(self.M) != self.M or self.M < 1:
            raise ParameterError("M must be a positive integer")
        rp = 4 * self.M if self.real_points is None else int(self.real_points)
        if rp < 2 * self.M + 1:
            raise ParameterError("real_points must be at least 2M + 1")
        object.__setattr__(self, "real_points", rp)

    @property
    def period(self) -> float:
        return 2.0 * math.pi * self.M

    @property
    def spacing(self) -> float:
        return self.period / self.real_points

    @property
    def dk(self) -> float:
        return float(self.M) ** (-self.n)

    @cached_property
    def modes(self) -> np.ndarray:
        """Half-space integer modes sorted by |m| (then lexicographically)."""
        M, n = self.M, self.n
        r = np.arange(-M, M + 1)
        mesh = np.stack(np.meshgrid(*([r] * n), indexing="ij"), axis=-1).reshape(-1, n)
        m2 = (mesh**2).sum(axis=1)
        keep = (m2 > 0) & (m2 <= M * M)
        # first nonzero coordinate counted from the last axis is positive
        half = np.zeros(len(mesh), dtype=bool)
        undecided = np.ones(len(mesh), dtype=bool)
        for ax in range(n - 1, -1, -1):
            c = mesh[:, ax]
            half |= undecided & (c > 0)
            undecided &= c == 0
        mesh = mesh[keep & half]
        order = np.lexsort(tuple(mesh[:, a] for a in range(n - 1, -1, -1)) + ((mesh**2).sum(1),))
        return mesh[order]

    @cached_property
    def m2(self) -> np.ndarray:
        return (self.modes**2).sum(axis=1)

    @cached_property
    def kvec(self) -> np.ndarray:
        return self.modes / float(self.M)

    @cached_property
    def kabs(self) -> np.ndarray:
        return np.sqrt(self.m2) / float(self.M)

    @cached_property
    def spectral_sum(self) -> float:
        """sum over all (both half spaces) modes of |k|^{2-n} dk."""
        return 2.0 * float(np.sum(self.kabs ** (2 - self.n))) * self.dk

    @property
    def const(self) -> float:
        """Amplitude constant fixing E|b|^2 = eps^2 n/4 exactly on this lattice."""
        return (self.n / 4.0) / ((self.n - 1) * self.spectral_sum)

    def shell_slice(self, L_lo: float, L_hi: float) -> slice:
        """Modes with 1/L_hi < |k| <= 1/L_lo, as a contiguous slice."""
        if not 1.0 <= L_lo <= L_hi:
            raise ParameterError("shell needs 1 <= L_lo <= L_hi")
        M2 = float(self.M) ** 2
        lo = np.searchsorted(self.m2, M2 / L_hi**2, side="right")
        hi = np.searchsorted(self.m2, M2 / L_lo**2, side="right")
        return slice(int(lo), int(hi))

    def variance_weights(self, epsilon: float, sl: slice = slice(None)) -> np.ndarray:
        """Per-mode scalar variance s(k) = const eps^2 |k|^{2-n} dk."""
        return self.const * epsilon**2 * self.kabs[sl] ** (2 - self.n) * self.dk

    def rfft_shape(self) -> tuple[int, ...]:
        N = self.real_points
        return (N,) * (self.n - 1) + (N // 2 + 1,)

    def to_dict(self) -> dict:
        return {"n": self.n, "M": self.M, "real_points": self.real_points}


@dataclass(frozen=True)
class SpectralShellField:
    """Coefficients of a real field on a contiguous range of half-space modes.

    ``coeffs`` has shape (K, *component_shape): () for scalars, (n,) for
    vectors, (n, n) for tensors.  ``lam`` records the diffusivity used to
    build a corrector (scalar or per mode).
    """

    grid: TorusGrid
    shell: tuple[float, float]
    index: slice
    coeffs: np.ndarray
    rank: Rank
    epsilon: float = 0.0
    hermitian: bool = True
    lam: float | np.ndarray | None = None

    @property
    def kvec(self) -> np.ndarray:
        return self.grid.kvec[self.index]

    @property
    def kabs(self) -> np.ndarray:
        return self.grid.kabs[self.index]

    @property
    def modes(self) -> np.ndarray:
        return self.grid.modes[self.index]

    def __add__(self, other: "SpectralShellField") -> "SpectralShellField":
        return combine([self, other])


def combine(fields: Sequence[SpectralShellField]) -> SpectralShellField:
    """Sum of fields over adjacent shells (or the same shell) of one grid."""
    fields = sorted(fields, key=lambda f: f.index.start)
    first = fields[0]
    for f in fields[1:]:
        if f.grid is not first.grid and f.grid != first.grid:
            raise ParameterError("fields live on different grids")
        if f.rank != first.rank:
            raise ParameterError("fields have different ranks")
    start = fields[0].index.start
    stop = max(f.index.stop for f in fields)
    shape = (stop - start,) + first.coeffs.shape[1:]
    out = np.zeros(shape, dtype=complex)
    covered = np.zeros(stop - start, dtype=bool)
    for f in fields:
        a, b = f.index.start - start, f.index.stop - start
        out[a:b] += f.coeffs
        covered[a:b] = True
    if not covered.all():
        raise ParameterError("fields do not cover a contiguous mode range")
    shell = (min(f.shell[0] for f in fields), max(f.shell[1] for f in fields))
    return SpectralShellField(first.grid, shell, slice(start, stop), out, first.rank,
                              first.epsilon, all(f.hermitian for f in fields))


def _rng(rng) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return as_factory(rng).generator()


def sample_shell(grid: TorusGrid, epsilon: float, L_lo: float, L_hi: float,
                 rng: RngLike) -> SpectralShellField:
    """Gaussian drift increment supported on 1/L_hi < |k| <= 1/L_lo.

    Per half-space mode: c = sqrt(s(k)) (I - khat khat^T) g with g a complex
    standard normal vector, so E c c^* = s(k) (I - khat khat^T).
    """
    sl = grid.shell_slice(L_lo, L_hi)
    K = sl.stop - sl.start
    if K == 0:
        raise EmptyShellError(f"shell ({L_lo}, {L_hi}] has no modes at M={grid.M}")
    gen = _rng(rng)
    n = grid.n
    g = gen.standard_normal((K, n, 2)) @ np.array([1.0, 1.0j]) / math.sqrt(2.0)
    khat = grid.kvec[sl] / grid.kabs[sl, None]
    g = g - khat * np.einsum("ki,ki->k", khat, g)[:, None]
    amp = np.sqrt(grid.variance_weights(epsilon, sl))
    return SpectralShellField(grid, (float(L_lo), float(L_hi)), sl, amp[:, None] * g, "vector", epsilon)


def sample_shell_increment(grid: TorusGrid, ladder: ScaleLadder, j: int, rng: RngLike) -> SpectralShellField:
    """Drift increment db for the ladder shell (L_j, L_{j+1}]."""
    if not 0 <= j < ladder.J:
        raise ParameterError(f"level index {j} outside 0..{ladder.J - 1}")
    return sample_shell(grid, ladder.epsilon, float(ladder.levels[j]), float(ladder.levels[j + 1]), rng)


def _k_checked(f: SpectralShellField) -> tuple[np.ndarray, np.ndarray]:
    k = f.kvec
    k2 = f.kabs**2
    if np.any(k2 == 0):
        raise GaugeError("the k = 0 mode cannot be gauged")
    return k, k2


def stream_increment(db: SpectralShellField) -> SpectralShellField:
    """Psi(k) = (i/|k|^2)(k (x) c - c (x) k), so that i k_j Psi^{ij} = c^i."""
    if db.rank != "vector":
        raise ParameterError("stream_increment expects a vector field")
    k, k2 = _k_checked(db)
    c = db.coeffs
    psi = 1j / k2[:, None, None] * (k[:, :, None] * c[:, None, :] - c[:, :, None] * k[:, None, :])
    return replace(db, coeffs=psi, rank="skew-tensor", lam=None)


def lambda_per_mode(kabs: np.ndarray, epsilon: float) -> np.ndarray:
    """lt evaluated at the scale L = 1/|k| of each mode."""
    return np.sqrt(1.0 + epsilon**2 * np.log(1.0 / kabs))


def corrector_increment(db: SpectralShellField, lambda_j: float | None = None) -> SpectralShellField:
    """dphi(k) = c(k) / (lt |k|^2).

    With ``lambda_j=None`` lt is taken per mode at L = 1/|k|, which is the
    exact action on every infinitesimal shell; a number uses one lt for the
    whole shell.
    """
    if db.rank != "vector":
        raise ParameterError("corrector_increment expects a vector field")
    k, k2 = _k_checked(db)
    lam = lambda_per_mode(db.kabs, db.epsilon) if lambda_j is None else float(lambda_j)
    return replace(db, coeffs=db.coeffs / (lam * k2)[:, None], lam=lam)


def gradient(f: SpectralShellField) -> SpectralShellField:
    """Spectral gradient of a vector field: out[..., i, j] = d_j f^i."""
    if f.rank != "vector":
        raise ParameterError("gradient expects a vector field")
    g = 1j * f.coeffs[:, :, None] * f.kvec[:, None, :]
    return replace(f, coeffs=g, rank="vector-of-gradients")


def divergence_tensor(f: SpectralShellField) -> SpectralShellField:
    """(div T)^i = d_j T^{ij} for a tensor field."""
    if f.rank != "skew-tensor":
        raise ParameterError("divergence_tensor expects a skew-tensor field")
    d = 1j * np.einsum("kij,kj->ki", f.coeffs, f.kvec)
    return replace(f, coeffs=d, rank="vector", lam=None)


def sigma_increment(dpsi: SpectralShellField, dphi: SpectralShellField) -> list[SpectralShellField]:
    """Coulomb-gauge flux increments, one skew tensor per coordinate i.

    X^i = dPsi e^i + lt grad dphi^i (components X^{i,k} = dPsi^{ik} +
    lt i k_k dphi^i); sigma^i(k) = (i/|k|^2)(k (x) X^i - X^i (x) k).
    """
    if dpsi.index != dphi.index:
        raise ParameterError("inputs must live on the same shell")
    if dphi.lam is None:
        raise ParameterError("dphi must come from corrector_increment")
    k, k2 = _k_checked(dphi)
    lam = np.broadcast_to(np.asarray(dphi.lam, dtype=float), k2.shape)
    out = []
    for i in range(dpsi.grid.n):
        X = dpsi.coeffs[:, i, :] + (1j * lam * dphi.coeffs[:, i])[:, None] * k
        s = 1j / k2[:, None, None] * (k[:, :, None] * X[:, None, :] - X[:, :, None] * k[:, None, :])
        out.append(replace(dpsi, coeffs=s, rank="skew-tensor", lam=None))
    return out


def sigma_residual(dpsi: SpectralShellField, dphi: SpectralShellField,
                   sigmas: Sequence[SpectralShellField]) -> float:
    """max |dPsi e^i + lt grad dphi^i - div sigma^i| over modes and i."""
    k = dphi.kvec
    lam = np.broadcast_to(np.asarray(dphi.lam, dtype=float), dphi.kabs.shape)
    worst = 0.0
    for i, s in enumerate(sigmas):
        X = dpsi.coeffs[:, i, :] + (1j * lam * dphi.coeffs[:, i])[:, None] * k
        div = 1j * np.einsum("kab,kb->ka", s.coeffs, k)
        worst = max(worst, float(np.abs(X - div).max()) if len(k) else 0.0)
    return worst


def _component_count(f: SpectralShellField) -> int:
    return int(np.prod(f.coeffs.shape[1:], dtype=int))


def to_rfft(f: SpectralShellField, N: int | None = None) -> np.ndarray:
    """Scatter coefficients into an rfftn-layout array (components first)."""
    grid = f.grid
    N = grid.real_points if N is None else int(N)
    if N < 2 * grid.M + 1:
        raise ParameterError("transform size must be at least 2M + 1")
    comp_shape = f.coeffs.shape[1:]
    C = f.coeffs.reshape(len(f.coeffs), -1)
    shape = (N,) * (grid.n - 1) + (N // 2 + 1,)
    out = np.zeros((C.shape[1],) + shape, dtype=complex)
    m = f.modes
    idx = tuple(np.mod(m[:, a], N) for a in range(grid.n))
    out[(slice(None),) + idx] = C.T
    plane = m[:, -1] == 0
    if np.any(plane):
        midx = tuple(np.mod(-m[plane, a], N) for a in range(grid.n))
        out[(slice(None),) + midx] = np.conj(C[plane]).T
    return out.reshape(comp_shape + shape)


def synthesize_realspace(f: SpectralShellField, gradient_channels: bool = False,
                         N: int | None = None, workers: int | None = None):
    """Real-space samples on the N^n grid (N defaults to ``grid.real_points``).

    With ``gradient_channels`` the spectral derivatives d_j are returned too,
    stacked on a trailing component axis.
    """
    if not f.hermitian:
        raise SynthesisError("field is not Hermitian symmetric; refusing to synthesize")
    grid = f.grid
    N = grid.real_points if N is None else int(N)
    spec = to_rfft(f, N)
    n = grid.n
    axes = tuple(range(-n, 0))
    real = sfft.irfftn(spec, s=(N,) * n, axes=axes, norm="forward", workers=workers)
    if not gradient_channels:
        return real
    kax = wavenumbers(grid, N)
    grads = [sfft.irfftn(1j * kax[j] * spec, s=(N,) * n, axes=axes, norm="forward", workers=workers)
             for j in range(n)]
    return real, np.stack(grads, axis=-n - 1)


def wavenumbers(grid: TorusGrid, N: int | None = None) -> list[np.ndarray]:
    """Broadcastable k_j arrays for the rfftn layout of size N."""
    N = grid.real_points if N is None else int(N)
    n = grid.n
    full = np.fft.fftfreq(N, d=1.0 / N) / grid.M
    half = np.fft.rfftfreq(N, d=1.0 / N) / grid.M
    out = []
    for j in range(n):
        shape = [1] * n
        shape[j] = -1
        arr = half if j == n - 1 else full
        out.append(arr.reshape(shape))
    return out


def band_mask(grid: TorusGrid, N: int | None = None) -> np.ndarray:
    """Boolean rfftn-layout mask of the retained band |m| <= M."""
    ks = wavenumbers(grid, N)
    k2 = sum(k**2 for k in ks)
    return k2 <= 1.0 + 1e-12


def real_grid_points(grid: TorusGrid, N: int | None = None) -> np.ndarray:
    N = grid.real_points if N is None else int(N)
    return np.arange(N) * (grid.period / N)


def evaluate_at(f: SpectralShellField, points) -> np.ndarray:
    """Exact trigonometric evaluation at arbitrary points, shape (P, *components)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    phase = np.exp(1j * pts @ f.kvec.T)  # (P, K)
    C = f.coeffs.reshape(len(f.coeffs), -1)
    vals = 2.0 * np.real(phase @ C)
    return vals.reshape((len(pts),) + f.coeffs.shape[1:])


def parseval_mean(f: SpectralShellField, g: SpectralShellField | None = None) -> np.ndarray:
    """Spatial mean of u (x) v^T componentwise: 2 Re sum_half u_hat conj(v_hat)."""
    g = f if g is None else g
    if f.index != g.index:
        raise ParameterError("fields must share the mode range")
    a = f.coeffs.reshape(len(f.coeffs), -1)
    b = g.coeffs.reshape(len(g.coeffs), -1)
    out = 2.0 * np.real(a.T @ np.conj(b))
    return out.reshape(f.coeffs.shape[1:] + g.coeffs.shape[1:])


def total_variance(grid: TorusGrid, epsilon: float, L: float = math.inf) -> float:
    """Expected E|b_L|^2 as a sum of per-mode covariance traces."""
    sl = grid.shell_slice(1.0, L) if math.isfinite(L) else slice(None)
    return 2.0 * (grid.n - 1) * float(grid.variance_weights(epsilon, sl).sum())


def expected_psi_variance(grid: TorusGrid, epsilon: float, L: float) -> float:
    """E |Psi_L|^2 (Frobenius) = 2 sum_all 2 s(k) (n-1)/|k|^2 over the band."""
    sl = grid.shell_slice(1.0, L)
    s = grid.variance_weights(epsilon, sl)
    return 2.0 * float(np.sum(2.0 * (grid.n - 1) * s / grid.kabs[sl] ** 2))


@dataclass
class FieldSnapshot:
    """Real-space samples with the manifest written next to the binary data."""

    data: np.ndarray
    manifest: dict = field(default_factory=dict)

    def save(self, stem: str) -> tuple[str, str]:
        import json

        raw = stem + ".f64"
        np.ascontiguousarray(self.data, dtype="<f8").tofile(raw)
        man = dict(self.manifest, shape=list(self.data.shape), dtype="<f8", order="C")
        meta = stem + ".json"
        with open(meta, "w") as fh:
            json.dump(man, fh, indent=2, sort_keys=True)
        return raw, meta

    @classmethod
    def load(cls, stem: str) -> "FieldSnapshot":
        import json

        with open(stem + ".json") as fh:
            man = json.load(fh)
        data = np.fromfile(stem + ".f64", dtype=man["dtype"]).reshape(man["shape"])
        return cls(data, man)


__all__ = [
    "FieldSnapshot",
    "SpectralShellField",
    "TorusGrid",
    "band_mask",
    "combine",
    "corrector_increment",
    "divergence_tensor",
    "evaluate_at",
    "expected_psi_variance",
    "gradient",
    "lambda_per_mode",
    "parseval_mean",
    "real_grid_points",
    "sample_shell",
    "sample_shell_increment",
    "sigma_increment",
    "sigma_residual",
    "stream_increment",
    "synthesize_realspace",
    "to_rfft",
    "total_variance",
    "wavenumbers",
]
