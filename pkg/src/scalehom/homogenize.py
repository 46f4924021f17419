"""Scale-by-scale homogenization ladder on the torus.

Per shell the drift increment db produces dphi, dPsi and dsigma (see
:mod:`scalehom.field`).  The proxies follow the Ito updates

    dphi~^i   = (1 + phi~^j d_j) dphi^i
    dsigma~^i = dsigma^i + (d_j dphi^i) sigma~^j - phi~^i dPsi + phi~^j K^i_j

where K^i_j = E[(d_j dphi^i) dPsi] is the deterministic per-shell
covariation, computed exactly from the spectral covariance.  Products are
formed on an oversampled real grid and projected back to |m| <= M.

Skew tensors are stored through their components with k < l.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from itertools import combinations
from typing import Iterable, Literal, Sequence

import numpy as np
from scipy import fft as sfft

from .errors import EmptyShellError, IntegrationError, ParameterError
from .field import (
    TorusGrid,
    band_mask,
    corrector_increment,
    gradient,
    lambda_per_mode,
    sample_shell_increment,
    sigma_increment,
    stream_increment,
    to_rfft,
    wavenumbers,
)
from .harness.rng import RngLike, as_factory
from .harness.stats import MomentEstimate, agree, batch_means_ci, bonferroni_z
from .ladder import ScaleLadder, lambda_of_time, tau_of_scale
from .slbm import make_basis, sample_at

LambdaMode = Literal["grid", "continuum"]
NORM_LIMIT = 1e100


def skew_pairs(n: int) -> list[tuple[int, int]]:
    return list(combinations(range(n), 2))


def full_skew(parts: np.ndarray, n: int) -> np.ndarray:
    """Expand (..., P, *space) pair components into (..., n, n, *space)."""
    pairs = skew_pairs(n)
    P = len(pairs)
    # the pair axis sits right before the n spatial axes
    pa = parts.ndim - n - 1
    if parts.shape[pa] != P:
        raise ParameterError("unexpected pair-axis length")
    shape = parts.shape[:pa] + (n, n) + parts.shape[pa + 1:]
    out = np.zeros(shape, dtype=parts.dtype)
    for p, (a, b) in enumerate(pairs):
        src = np.take(parts, p, axis=pa)
        idx_ab = (slice(None),) * pa + (a, b)
        idx_ba = (slice(None),) * pa + (b, a)
        out[idx_ab] = src
        out[idx_ba] = -src
    return out


class _Transforms:
    """rfftn/irfftn on the N^n grid with the proxy-band projector |k| <= band."""

    def __init__(self, grid: TorusGrid, N: int, band: float = 1.0, workers: int | None = None):
        self.grid = grid
        self.n = grid.n
        self.N = N
        self.axes = tuple(range(-grid.n, 0))
        self.k = wavenumbers(grid, N)
        self.mask = sum(k**2 for k in self.k) <= band**2 + 1e-12
        self.workers = workers

    def real(self, spec: np.ndarray) -> np.ndarray:
        return sfft.irfftn(spec, s=(self.N,) * self.n, axes=self.axes, norm="forward", workers=self.workers)

    def spec(self, real: np.ndarray) -> np.ndarray:
        out = sfft.rfftn(real, axes=self.axes, norm="forward", workers=self.workers)
        out *= self.mask
        return out

    def grad(self, spec: np.ndarray) -> np.ndarray:
        """Spectral gradient with the derivative index appended before space."""
        return np.stack([1j * self.k[j] * spec for j in range(self.n)], axis=-self.n - 1)


@dataclass
class LadderState:
    """Proxies at one level of one realization.

    Spectral mirrors (rfftn layout, band-limited) are authoritative; real
    samples are synthesized on demand.
    """

    grid: TorusGrid
    ladder: ScaleLadder
    N: int
    level: int
    lambda_grid: float
    phi_hat: np.ndarray  # (n, *spec)
    sigma_hat: np.ndarray  # (n, P, *spec)
    psi_hat: np.ndarray  # (P, *spec)
    proxy_band: float = 1.0

    @property
    def L(self) -> float:
        return float(self.ladder.levels[self.level])

    @property
    def lambda_tilde(self) -> float:
        return float(self.ladder.lambdas[self.level])

    def _t(self) -> _Transforms:
        return _Transforms(self.grid, self.N, self.proxy_band)

    def phi_tilde(self) -> np.ndarray:
        return self._t().real(self.phi_hat)

    def sigma_tilde(self) -> np.ndarray:
        """Full skew tensors, shape (n, n, n, *space) indexed [i, k, l]."""
        return full_skew(self._t().real(self.sigma_hat), self.grid.n)

    def psi(self) -> np.ndarray:
        return full_skew(self._t().real(self.psi_hat), self.grid.n)

    def a_field(self) -> np.ndarray:
        """I + Psi_L on the grid, shape (n, n, *space)."""
        a = self.psi()
        for i in range(self.grid.n):
            a[i, i] += 1.0
        return a


def shell_covariation(grid: TorusGrid, ladder: ScaleLadder, j: int,
                      lam: float | None = None) -> np.ndarray:
    """K[i, jj, a, b] = E[(d_jj dphi^i) dPsi^{ab}] for ladder shell j.

    Per mode E ghat_{i,jj} conj(Psihat^{ab}) = s k_jj (k_a P_ib - k_b P_ia) /
    (lt |k|^4); the sum runs over both half spaces, hence the factor 2.
    """
    sl = grid.shell_slice(float(ladder.levels[j]), float(ladder.levels[j + 1]))
    k = grid.kvec[sl]
    kk = grid.kabs[sl]
    s = grid.variance_weights(ladder.epsilon, sl)
    lt = lambda_per_mode(kk, ladder.epsilon) if lam is None else np.full_like(kk, lam)
    P = np.eye(grid.n)[None] - k[:, :, None] * k[:, None, :] / kk[:, None, None] ** 2
    w = 2.0 * s / (lt * kk**4)
    t1 = np.einsum("m,mj,ma,mib->ijab", w, k, k, P)
    return t1 - t1.transpose(0, 1, 3, 2)


def shell_qv(grid: TorusGrid, ladder: ScaleLadder, j: int) -> np.ndarray:
    """Expected E[grad dphi (grad dphi)^T] at a point for shell j, (n, n)."""
    sl = grid.shell_slice(float(ladder.levels[j]), float(ladder.levels[j + 1]))
    k = grid.kvec[sl]
    kk = grid.kabs[sl]
    s = grid.variance_weights(ladder.epsilon, sl)
    lt = lambda_per_mode(kk, ladder.epsilon)
    P = np.eye(grid.n)[None] - k[:, :, None] * k[:, None, :] / kk[:, None, None] ** 2
    # sum_l E g_il conj(g_jl) = s P_ij |k|^2 / (lt |k|^2)^2
    return np.einsum("m,mij->ij", 2.0 * s / (lt**2 * kk**2), P)


def grid_clock(grid: TorusGrid, ladder: ScaleLadder) -> np.ndarray:
    """Accumulated tr QV / n per level: the lattice version of tau."""
    inc = [np.trace(shell_qv(grid, ladder, j)) / grid.n for j in range(ladder.J)]
    return np.concatenate([[0.0], np.cumsum(inc)])


def grid_lambda(grid: TorusGrid, ladder: ScaleLadder) -> np.ndarray:
    """1 + accumulated E[(dPsi grad dphi)] trace / n per level.

    This is the value of lt that makes E f~ vanish exactly on the lattice.
    """
    n = grid.n
    out = [1.0]
    for j in range(ladder.J):
        K = shell_covariation(grid, ladder, j)
        # E (dPsi grad dphi^i)_k = sum_jj K[i, jj, jj, k]
        d = np.einsum("ijjk->ik", K)
        out.append(out[-1] + np.trace(d) / n)
    return np.array(out)


def _ladder_transform_size(grid: TorusGrid, proxy_band: float) -> int:
    N = int(grid.real_points)
    need = math.floor((2.0 * proxy_band + 1.0) * grid.M) + 1
    if N < need:
        raise ParameterError(f"proxy band {proxy_band} needs real_points >= {need} for dealiased products")
    return N


def dealiased_grid(n: int, M: int, proxy_band: float = 2.0) -> TorusGrid:
    """Smallest fast transform size for which products of a proxy on |k| <= proxy_band
    with a drift-band field project back to the proxy band without aliasing."""
    if proxy_band < 1.0:
        raise ParameterError("proxy_band must be >= 1")
    need = math.floor((2.0 * proxy_band + 1.0) * M) + 1
    return TorusGrid(n, M, sfft.next_fast_len(need, real=True))


@dataclass
class LevelRecord:
    level: int
    L: float
    lambda_tilde: float
    lambda_grid: float
    tau: float
    phi2: float
    phi4: float
    sigma2: float
    f2: float
    f_mean: np.ndarray
    psi2: float
    grad_phi_mean: float
    qv_sym: np.ndarray
    qv_trace: float
    sde_mismatch2: float = math.nan
    sde_rhs2: float = math.nan

    def row(self) -> dict:
        return {
            "level": self.level, "L": self.L, "lambda_tilde": self.lambda_tilde,
            "lambda_grid": self.lambda_grid, "tau": self.tau, "E_phi2": self.phi2,
            "E_phi4": self.phi4, "E_sigma2": self.sigma2, "E_f2": self.f2, "E_psi2": self.psi2,
            "qv_trace_over_n": self.qv_trace,
        }


@dataclass
class LadderTrajectory:
    records: list[LevelRecord]
    states: dict[int, LadderState] = field(default_factory=dict)
    seed: int | None = None


def residuum_from_definition(state: LadderState, lambda_mode: LambdaMode = "grid",
                             grad_phi: np.ndarray | None = None) -> np.ndarray:
    """f~^i_k = (a (e^i + grad phi~^i))_k - lt delta_ik - (div sigma~^i)_k.

    Returns real samples of shape (n, n, *space) indexed [i, k].  With
    ``lambda_mode='grid'`` lt is the lattice value for which E f~ = 0 exactly.
    ``grad_phi`` may pass real samples of grad phi~ that are already known.
    """
    n = state.grid.n
    t = state._t()
    lam = state.lambda_grid if lambda_mode == "grid" else state.lambda_tilde
    G = t.real(t.grad(state.phi_hat)) if grad_phi is None else grad_phi  # [i, j] = d_j phi^i
    sig = full_skew(state.sigma_hat, n)  # spectral [i, k, l]
    div_hat = sum(1j * t.k[l] * sig[:, :, l] for l in range(n))
    D = t.real(div_hat)
    Psi = state.psi()
    v = G.copy()
    for i in range(n):
        v[i, i] += 1.0  # v[i, j] = (e^i + grad phi^i)_j
    f = v + np.einsum("jk...,ij...->ik...", Psi, v) - D
    for i in range(n):
        f[i, i] -= lam
    return f


def _moments(state: LadderState, qv: np.ndarray, lambda_mode: LambdaMode,
             phi: np.ndarray | None = None, sig: np.ndarray | None = None) -> LevelRecord:
    n = state.grid.n
    t = state._t()
    sp = tuple(range(-n, 0))
    phi = t.real(state.phi_hat) if phi is None else phi
    p2 = (phi**2).sum(axis=0)
    sig = t.real(state.sigma_hat) if sig is None else sig
    psi = t.real(state.psi_hat)
    G = t.real(t.grad(state.phi_hat))
    f = residuum_from_definition(state, lambda_mode, grad_phi=G)
    for arr in (phi, sig, f):
        m = float(np.abs(arr).max()) if arr.size else 0.0
        if not math.isfinite(m) or m > NORM_LIMIT:
            raise IntegrationError(f"field norm overflow at level {state.level}")
    return LevelRecord(
        level=state.level,
        L=state.L,
        lambda_tilde=state.lambda_tilde,
        lambda_grid=state.lambda_grid,
        tau=float(state.ladder.taus[state.level]),
        phi2=float(p2.mean()),
        phi4=float((p2**2).mean()),
        sigma2=float(2.0 * (sig**2).sum(axis=(0, 1)).mean()),
        f2=float((f**2).sum(axis=(0, 1)).mean()),
        f_mean=f.mean(axis=sp),
        psi2=float(2.0 * (psi**2).sum(axis=0).mean()),
        grad_phi_mean=float(np.abs(G.mean(axis=sp)).max()),
        qv_sym=qv.copy(),
        qv_trace=float(np.trace(qv) / n),
    )


def _zero_record(state: LadderState, lambda_mode: LambdaMode) -> LevelRecord:
    """Record of the level-0 state, where every proxy vanishes and f~ = (1 - lt) Id."""
    n = state.grid.n
    lam = state.lambda_grid if lambda_mode == "grid" else state.lambda_tilde
    fm = (1.0 - lam) * np.eye(n)
    return LevelRecord(level=state.level, L=state.L, lambda_tilde=state.lambda_tilde,
                       lambda_grid=state.lambda_grid, tau=float(state.ladder.taus[state.level]),
                       phi2=0.0, phi4=0.0, sigma2=0.0, f2=float(n * (1.0 - lam) ** 2), f_mean=fm,
                       psi2=0.0, grad_phi_mean=0.0, qv_sym=np.zeros((n, n)), qv_trace=0.0)


def run_ladder(
    grid: TorusGrid,
    ladder: ScaleLadder,
    rng: RngLike = 0,
    keep_levels: Iterable[int] = (),
    lambda_mode: LambdaMode = "grid",
    workers: int | None = None,
    sde_check: bool = False,
    proxy_band: float = 2.0,
    record_levels: Iterable[int] | None = None,
) -> LadderTrajectory:
    """One realization of the ladder; one record per level, states on request.

    The shell increment of level j is drawn from stream ``(seed, j)``.  With
    ``sde_check`` every record also carries the spatial mean of
    |f~_{j+1} - f~_j - R_j|^2 and |R_j|^2, where R_j is the Ito increment
    f~ grad dphi + (phi~^j a + sigma~^j) grad d_j dphi + phi~ (x) db.

    The proxies are kept on |k| <= ``proxy_band`` (in units of the drift
    cutoff); ``record_levels`` limits the per-level statistics (level 0 and
    the last level are always recorded).
    """
    n = grid.n
    N = _ladder_transform_size(grid, proxy_band)
    for j in range(ladder.J):
        sl = grid.shell_slice(float(ladder.levels[j]), float(ladder.levels[j + 1]))
        if ladder.epsilon > 0 and sl.stop == sl.start:
            raise EmptyShellError(f"ladder shell {j} is empty at M={grid.M}")
    fac = as_factory(rng)
    t = _Transforms(grid, N, proxy_band, workers)
    rec_set = None if record_levels is None else set(int(x) for x in record_levels) | {0, ladder.J}
    pairs = skew_pairs(n)
    P = len(pairs)
    iu = [a for a, _ in pairs]
    ju = [b for _, b in pairs]
    spec_shape = grid.rfft_shape()
    lam_grid = grid_lambda(grid, ladder) if ladder.epsilon > 0 else np.ones(ladder.J + 1)
    state = LadderState(grid, ladder, N, 0, 1.0,
                        np.zeros((n,) + spec_shape, complex),
                        np.zeros((n, P) + spec_shape, complex),
                        np.zeros((P,) + spec_shape, complex), proxy_band)
    keep = set(int(k) for k in keep_levels)
    qv = np.zeros((n, n))
    records = [_zero_record(state, lambda_mode)]
    states: dict[int, LadderState] = {}
    if 0 in keep:
        states[0] = _copy_state(state)
    phi = np.zeros((n,) + (N,) * n)
    sig = np.zeros((n, P) + (N,) * n)
    for j in range(ladder.J):
        if ladder.epsilon == 0.0:
            state = LadderState(grid, ladder, N, j + 1, 1.0, state.phi_hat, state.sigma_hat,
                                state.psi_hat, proxy_band)
            if rec_set is None or j + 1 in rec_set:
                records.append(_moments(state, qv, lambda_mode))
            if j + 1 in keep:
                states[j + 1] = _copy_state(state)
            continue
        db = sample_shell_increment(grid, ladder, j, fac.generator(j))
        dphi = corrector_increment(db)
        dpsi = stream_increment(db)
        dsig = sigma_increment(dpsi, dphi)
        g = gradient(dphi)
        qv += 2.0 * np.real(np.einsum("mil,mjl->ij", g.coeffs, np.conj(g.coeffs)))
        phi_s = to_rfft(dphi, N)
        psi_s = to_rfft(dpsi, N)[iu, ju]
        sig_s = np.stack([to_rfft(s, N)[iu, ju] for s in dsig])
        K = shell_covariation(grid, ladder, j)  # [i, jj, a, b]
        Kp = K[:, :, iu, ju]  # [i, jj, p]
        stack = np.concatenate([phi_s, t.grad(phi_s).reshape((n * n,) + spec_shape), psi_s,
                                sig_s.reshape((n * P,) + spec_shape)])
        real = t.real(stack)
        dphi_r = real[:n]
        dgrad = real[n:n + n * n].reshape((n, n) + (N,) * n)  # [i, jj]
        dpsi_r = real[n + n * n:n + n * n + P]
        dsig_r = real[n + n * n + P:].reshape((n, P) + (N,) * n)
        new_phi = phi + dphi_r + np.einsum("j...,ij...->i...", phi, dgrad)
        new_sig = (sig + dsig_r
                   + np.einsum("ij...,jp...->ip...", dgrad, sig)
                   - phi[:, None] * dpsi_r[None]
                   + np.einsum("j...,ijp->ip...", phi, Kp))
        phi_hat = t.spec(new_phi)
        sig_hat = t.spec(new_sig)
        phi = t.real(phi_hat)
        sig = t.real(sig_hat)
        prev = state
        state = LadderState(grid, ladder, N, j + 1, float(lam_grid[j + 1]), phi_hat, sig_hat,
                            state.psi_hat + psi_s, proxy_band)
        if rec_set is None or j + 1 in rec_set:
            rec = _moments(state, qv, lambda_mode, phi, sig)
            if sde_check:
                rec.sde_mismatch2, rec.sde_rhs2 = _sde_mismatch(prev, state, db, dphi, lambda_mode)
            records.append(rec)
        if j + 1 in keep:
            states[j + 1] = _copy_state(state)
    return LadderTrajectory(records, states, fac.seed)


def _sde_mismatch(prev: LadderState, new: LadderState, db, dphi, lambda_mode: LambdaMode) -> tuple[float, float]:
    n = prev.grid.n
    t = prev._t()
    sp = tuple(range(-n, 0))
    f0 = residuum_from_definition(prev, lambda_mode)
    f1 = residuum_from_definition(new, lambda_mode)
    phi = t.real(prev.phi_hat)
    sig = prev.sigma_tilde()  # [j, m, k]
    a = prev.a_field()  # [m, k]
    ph = to_rfft(dphi, t.N)
    g1 = t.real(t.grad(ph))  # [i, l] = d_l dphi^i
    g2 = t.real(t.grad(t.grad(ph)))  # [i, j, m] = d_m d_j dphi^i
    b = t.real(to_rfft(db, t.N))
    # (f~ xi)_k = xi_l f~^l_k and (A v)_k = v_m A^{mk}
    term1 = np.einsum("il...,lk...->ik...", g1, f0)
    term2 = (np.einsum("j...,mk...,ijm...->ik...", phi, a, g2)
             + np.einsum("jmk...,ijm...->ik...", sig, g2))
    term3 = phi[:, None] * b[None, :]
    rhs = term1 + term2 + term3
    mis = (f1 - f0) - rhs
    return float((mis**2).sum(axis=(0, 1)).mean(axis=sp)), float((rhs**2).sum(axis=(0, 1)).mean(axis=sp))


def _copy_state(s: LadderState) -> LadderState:
    return LadderState(s.grid, s.ladder, s.N, s.level, s.lambda_grid,
                       s.phi_hat.copy(), s.sigma_hat.copy(), s.psi_hat.copy(), s.proxy_band)


@dataclass
class LadderEnsemble:
    """Per-level ensemble statistics over independent realizations."""

    epsilon: float
    levels: np.ndarray
    lambdas: np.ndarray
    lambda_grid: np.ndarray
    taus: np.ndarray
    per_real: dict[str, np.ndarray]  # name -> (n_real, recorded levels)
    f_mean: np.ndarray  # (n_real, recorded levels, n, n)
    level_index: np.ndarray | None = None  # ladder index of each recorded level

    def estimate(self, name: str, level: int) -> MomentEstimate:
        x = self.per_real[name][:, level]
        if np.ptp(x) == 0.0:
            return MomentEstimate(float(x[0]), 0.0, x.size, "mean")
        return batch_means_ci(x, batches=min(32, max(16, x.size // 2))) if x.size >= 32 else _small_ci(x)

    def rows(self) -> list[dict]:
        out = []
        for lv in range(len(self.levels)):
            idx = lv if self.level_index is None else int(self.level_index[lv])
            row = {"level": idx, "L": float(self.levels[lv]), "lambda_tilde": float(self.lambdas[lv]),
                   "lambda_grid": float(self.lambda_grid[lv]), "tau": float(self.taus[lv])}
            for name in self.per_real:
                e = self.estimate(name, lv)
                row[name] = e.value
                row[name + "_ci"] = e.half_width
            out.append(row)
        return out


def _small_ci(x: np.ndarray) -> MomentEstimate:
    from scipy import stats

    m = float(x.mean())
    if x.size < 2:
        return MomentEstimate(m, math.inf, x.size, "mean")
    hw = float(stats.t.ppf(0.975, x.size - 1) * x.std(ddof=1) / math.sqrt(x.size))
    return MomentEstimate(m, hw, x.size, "mean")


def run_ensemble(grid: TorusGrid, ladder: ScaleLadder, n_real: int, rng: RngLike = 0,
                 lambda_mode: LambdaMode = "grid", workers: int | None = None,
                 proxy_band: float = 2.0, record_levels: Iterable[int] | None = None) -> LadderEnsemble:
    """Independent realizations on streams ``(seed, r)``; statistics per recorded level."""
    if n_real < 1:
        raise ParameterError("n_real must be >= 1")
    fac = as_factory(rng)
    names = ("E_phi2", "E_phi4", "E_sigma2", "E_f2", "E_psi2", "qv_trace_over_n")
    per: dict[str, np.ndarray] = {}
    fm = None
    idx = None
    lam_grid = None
    for r in range(n_real):
        traj = run_ladder(grid, ladder, fac.child(r), lambda_mode=lambda_mode, workers=workers,
                          proxy_band=proxy_band, record_levels=record_levels)
        if idx is None:
            idx = np.array([rec.level for rec in traj.records])
            per = {k: np.zeros((n_real, len(idx))) for k in names}
            fm = np.zeros((n_real, len(idx), grid.n, grid.n))
            lam_grid = np.array([rec.lambda_grid for rec in traj.records])
        for c, rec in enumerate(traj.records):
            row = rec.row()
            for k in names:
                per[k][r, c] = row[k]
            fm[r, c] = rec.f_mean
    return LadderEnsemble(ladder.epsilon, np.array(ladder.levels)[idx], np.array(ladder.lambdas)[idx],
                          lam_grid, np.array(ladder.taus)[idx], per, fm, idx)


@dataclass(frozen=True)
class BoundFit:
    """Fitted constants C for the corrector and residuum bounds."""

    name: str
    constants: dict[tuple[float, float], float]  # (eps, L) -> C

    @property
    def spread(self) -> float:
        vals = list(self.constants.values())
        return max(vals) / min(vals) if min(vals) > 0 else math.inf

    @property
    def stable(self) -> bool:
        return self.spread <= 2.0


def bound_constants(ensembles: Sequence[LadderEnsemble], L_values: Sequence[float]) -> list[BoundFit]:
    """C for lt E^{1/4}|phi~|^4 <= C eps L, E^{1/2}|sigma~|^2 <= C eps L and E|f~|^2 <= C eps^2 lt."""
    phi, sig, f = {}, {}, {}
    for ens in ensembles:
        eps = ens.epsilon
        for L in L_values:
            lv = int(np.argmin(np.abs(ens.levels - L)))
            if not math.isclose(ens.levels[lv], L, rel_tol=1e-9):
                raise ParameterError(f"L={L} is not a ladder level")
            lam = float(ens.lambdas[lv])
            phi[(eps, L)] = lam * ens.per_real["E_phi4"][:, lv].mean() ** 0.25 / (eps * L)
            sig[(eps, L)] = math.sqrt(ens.per_real["E_sigma2"][:, lv].mean()) / (eps * L)
            f[(eps, L)] = ens.per_real["E_f2"][:, lv].mean() / (eps**2 * lam)
    return [BoundFit("phi", phi), BoundFit("sigma", sig), BoundFit("f", f)]


# quadratic variation and coupling ---------------------------------------------------------


def lattice_points(grid: TorusGrid, per_axis: int = 4) -> np.ndarray:
    """per_axis^n points on a regular lattice of the torus."""
    h = grid.period / per_axis
    r = np.arange(per_axis) * h
    mesh = np.stack(np.meshgrid(*([r] * grid.n), indexing="ij"), axis=-1)
    return mesh.reshape(-1, grid.n)


@dataclass
class QvResult:
    tau_continuum: float
    tau_grid: float
    sym_spatial: np.ndarray  # (n_real, n, n) Parseval spatial averages
    sym_points: np.ndarray  # (n_real, n, n) averaged over the point set
    anti_points: np.ndarray  # (n_real, n, n)
    n_points: int

    def estimate(self, which: str, i: int, j: int) -> MomentEstimate:
        arr = {"sym_spatial": self.sym_spatial, "sym_points": self.sym_points,
               "anti_points": self.anti_points}[which]
        return batch_means_ci(arr[:, i, j])


def qv_accumulator(grid: TorusGrid, ladder: ScaleLadder, rng: RngLike, n_real: int,
                   points: np.ndarray | None = None) -> QvResult:
    """Accumulate sum_j G_j G_j^T and sum_j G_j G_j with G_j = grad dphi_j.

    The symmetric variation is averaged over space exactly (Parseval) and
    also at the point set.  The antisymmetric one has vanishing spatial mean
    for every realization (the drift is divergence free), so it is measured
    from point samples only.
    """
    if n_real < 100:
        raise ParameterError("qv_accumulator needs at least 10^2 realizations")
    fac = as_factory(rng)
    n = grid.n
    pts = lattice_points(grid) if points is None else np.atleast_2d(np.asarray(points, float))
    shells = [grid.shell_slice(float(a), float(b)) for a, b in ladder.shells()]
    phases = [np.exp(1j * pts @ grid.kvec[sl].T) for sl in shells]
    sym_s = np.zeros((n_real, n, n))
    sym_p = np.zeros((n_real, n, n))
    anti_p = np.zeros((n_real, n, n))
    for r in range(n_real):
        sub = fac.child(r)
        for j in range(ladder.J):
            g = gradient(corrector_increment(sample_shell_increment(grid, ladder, j, sub.generator(j))))
            C = g.coeffs.reshape(len(g.coeffs), n * n)
            sym_s[r] += 2.0 * np.real(np.einsum("mil,mjl->ij", g.coeffs, np.conj(g.coeffs)))
            G = (2.0 * np.real(phases[j] @ C)).reshape(-1, n, n)
            sym_p[r] += np.einsum("pil,pjl->ij", G, G) / len(pts)
            anti_p[r] += np.einsum("pil,plj->ij", G, G) / len(pts)
    tau_c = float(ladder.taus[-1])
    return QvResult(tau_c, float(grid_clock(grid, ladder)[-1]), sym_s, sym_p, anti_p, len(pts))


@dataclass
class CoupledPaths:
    """B(x) = accumulated grad dphi(x) per realization, level and point."""

    points: np.ndarray
    taus: np.ndarray
    tau_grid: np.ndarray
    B: np.ndarray  # (n_real, J+1, P, n, n)


def coupled_b_at_points(grid: TorusGrid, ladder: ScaleLadder, points, rng: RngLike,
                        n_real: int) -> CoupledPaths:
    """Spectral point evaluation of sum over shells of grad dphi at each point."""
    fac = as_factory(rng)
    n = grid.n
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    out = np.zeros((n_real, ladder.J + 1, len(pts), n, n))
    shells = [grid.shell_slice(float(a), float(b)) for a, b in ladder.shells()]
    phases = [np.exp(1j * pts @ grid.kvec[sl].T) for sl in shells]
    for r in range(n_real):
        sub = fac.child(r)
        for j in range(ladder.J):
            g = gradient(corrector_increment(sample_shell_increment(grid, ladder, j, sub.generator(j))))
            G = 2.0 * np.real(phases[j] @ g.coeffs.reshape(len(g.coeffs), n * n))
            out[r, j + 1] = out[r, j] + G.reshape(-1, n, n)
    return CoupledPaths(pts, np.array(ladder.taus), grid_clock(grid, ladder), out)


def exact_cross_trace(grid: TorusGrid, ladder: ScaleLadder, separation) -> float:
    """tr E[B(x) B(y)^T] / n for y - x = separation, from the mode sum."""
    d = np.asarray(separation, dtype=float)
    tot = 0.0
    for j in range(ladder.J):
        sl = grid.shell_slice(float(ladder.levels[j]), float(ladder.levels[j + 1]))
        kk = grid.kabs[sl]
        s = grid.variance_weights(ladder.epsilon, sl)
        lt = lambda_per_mode(kk, ladder.epsilon)
        tot += float(np.sum(2.0 * s * (grid.n - 1) / (lt**2 * kk**2) * np.cos(grid.kvec[sl] @ d)))
    return tot / grid.n


def blowup_prediction(tau: float, distance: float, epsilon: float) -> float:
    """max(tau - ln r, 0) with r = lam(|x - y|^2)."""
    r = float(lambda_of_time(distance**2, epsilon))
    return max(tau - math.log(r), 0.0)


@dataclass
class CouplingReport:
    tau_grid: float
    entries: list[dict]
    z: float
    law_ok: bool
    trace: MomentEstimate
    cross: list[dict]
    decorrelation_ok: bool

    @property
    def ok(self) -> bool:
        return self.law_ok and self.decorrelation_ok


def coupling_check(grid: TorusGrid, ladder: ScaleLadder, rng: RngLike, n_real: int,
                   separations: Sequence[float] = (2.0, 8.0, 32.0), sampler_samples: int | None = None,
                   far_per_axis: int = 4) -> CouplingReport:
    """Compare field-coupled B with the sl(n) sampler and probe decorrelation.

    Base points form a coarse lattice; each base point also gets partners at
    the given separations along e_1.  Second moments vec(B) vec(B)^T at the
    last level are compared entrywise with a Bonferroni joint interval; the
    sampler runs at the lattice clock, which is the exact QV of the grid.
    """
    fac = as_factory(rng)
    n = grid.n
    base = lattice_points(grid, far_per_axis)
    e1 = np.zeros(n)
    e1[0] = 1.0
    partners = [base + d * e1 for d in separations]
    pts = np.concatenate([base] + partners)
    paths = coupled_b_at_points(grid, ladder, pts, fac.child("field"), n_real)
    tau_g = float(paths.tau_grid[-1])
    nb = len(base)
    B = paths.B[:, -1, :nb].reshape(n_real, nb, n * n)
    iu = np.triu_indices(n * n)
    field_prod = np.einsum("rpa,rpb->rab", B, B)[:, iu[0], iu[1]] / nb  # per-realization means
    ns = sampler_samples or n_real * nb
    S = sample_at(make_basis(n), tau_g, ns, fac.child("sampler")).reshape(ns, n * n)
    samp_prod = S[:, iu[0]] * S[:, iu[1]]
    z = bonferroni_z(len(iu[0]))
    entries = []
    ok = True
    for e in range(len(iu[0])):
        a = batch_means_ci(field_prod[:, e])
        b = batch_means_ci(samp_prod[:, e])
        good = agree(a, b, z)
        ok &= good
        entries.append({"entry": f"{iu[0][e]},{iu[1][e]}", "field": a.value, "field_ci": a.half_width,
                        "sampler": b.value, "sampler_ci": b.half_width, "agree": bool(good)})
    tr = batch_means_ci(np.einsum("rpa,rpa->r", B, B) / nb)
    cross = []
    dec_ok = True
    far_sep = grid.period / far_per_axis
    seps = list(separations) + [far_sep]
    for q, d in enumerate(seps):
        if q < len(separations):
            Y = paths.B[:, -1, nb * (q + 1):nb * (q + 2)].reshape(n_real, nb, n * n)
        else:
            Y = np.roll(paths.B[:, -1, :nb], -1, axis=1).reshape(n_real, nb, n * n)
        c = batch_means_ci(np.einsum("rpa,rpa->r", B, Y) / (nb * n))
        exact = exact_cross_trace(grid, ladder, d * e1)
        pred = blowup_prediction(tau_g, d, ladder.epsilon)
        hit = abs(c.value - exact) <= bonferroni_z(len(seps)) / 1.959963984540054 * c.half_width + 1e-15
        row = {"separation": d, "measured": c.value, "ci": c.half_width, "exact": exact,
               "blowup": pred, "agree_exact": bool(hit)}
        if pred == 0.0:
            row["zero_within_ci"] = bool(abs(c.value) <= bonferroni_z(len(seps)) / 1.959963984540054 * c.half_width)
            dec_ok &= row["zero_within_ci"]
        dec_ok &= hit
        cross.append(row)
    vals = [r["measured"] for r in cross]
    dec_ok &= all(x >= y - 3 * cross[i + 1]["ci"] for i, (x, y) in enumerate(zip(vals[:-1], vals[1:])))
    return CouplingReport(tau_g, entries, z, bool(ok), tr, cross, bool(dec_ok))


def msd_prediction(T, epsilon: float, n: int = 2):
    """2 n lam(T) T."""
    T = np.asarray(T, dtype=float)
    if np.any(T < 0):
        raise ParameterError("T must be non-negative")
    out = 2.0 * n * lambda_of_time(T, epsilon) * T
    return float(out) if out.ndim == 0 else out


__all__ = [
    "BoundFit",
    "CoupledPaths",
    "CouplingReport",
    "LadderEnsemble",
    "LadderState",
    "LadderTrajectory",
    "LevelRecord",
    "QvResult",
    "blowup_prediction",
    "bound_constants",
    "coupled_b_at_points",
    "coupling_check",
    "dealiased_grid",
    "exact_cross_trace",
    "full_skew",
    "grid_clock",
    "grid_lambda",
    "lattice_points",
    "msd_prediction",
    "qv_accumulator",
    "residuum_from_definition",
    "run_ensemble",
    "run_ladder",
    "shell_covariation",
    "shell_qv",
    "skew_pairs",
    "tau_of_scale",
]
