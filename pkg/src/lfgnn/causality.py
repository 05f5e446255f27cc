"""Liang-Kleeman information flow, its normalisation, significance and a Granger baseline.

Matrix convention throughout: ``M[j, i]`` refers to the directed pair
``j -> i`` (row = source, column = target).  Flow values are in nats per
second because the difference series is divided by ``step * dt``.

The linear estimator of the flow ``j -> i`` is

    T[j, i] = (1/det C) * sum_k cofactor(C)[j, k] * cov(X_k, dX_i) * C[i, j] / C[i, i]

which, by Cramer's rule, equals ``a[j, i] * C[i, j] / C[i, i]`` where
``a[:, i]`` solves ``C a = cov(X, dX_i)``: the coefficients of the
least-squares regression of ``dX_i`` on all channels.  Both forms are
implemented; the regression form is the production path.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import stats

from .errors import (ConfigError, InsufficientData, InvalidOrder, NumericalError, RankError, SingularCovariance,
                     SingularMatrix, SurrogateFailure)
from .numerics import (TimeSeriesSet, covariance, cross_covariance, determinant, first_difference,
                       lu_factor, lu_solve, solve_linear)
from .rng import CounterRNG

log = logging.getLogger(__name__)

MAX_REDRAWS = 10


@dataclass
class FlowDecomposition:
    """Per-target entropy budget of a multichannel recording."""

    flow: np.ndarray          # (n, n) nats/s, [source, target], zero diagonal
    self_rate: np.ndarray     # (n,) dH_i*/dt
    noise_rate: np.ndarray    # (n,) dH_i^noise/dt
    tau: np.ndarray | None = None
    p_values: np.ndarray | None = None
    labels: list[str] = field(default_factory=list)

    @property
    def n(self) -> int:
        return self.flow.shape[0]


@dataclass(frozen=True)
class SignificanceConfig:
    alpha: float = 0.01
    surrogate_count: int = 1000
    block_length: int | None = None   # samples; None -> rate / 2
    seed: int = 0
    method: str = "residual"          # "residual" | "source"

    def __post_init__(self):
        if not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.surrogate_count < 100:
            raise ConfigError("surrogate_count must be >= 100")
        if self.block_length is not None and self.block_length < 1:
            raise ConfigError("block_length must be >= 1")
        if self.method not in ("residual", "source"):
            raise ConfigError(f"unknown surrogate method {self.method!r}")

    def block_for(self, rate: float) -> int:
        if self.block_length is not None:
            return int(self.block_length)
        return max(1, int(round(rate / 2.0)))


@dataclass
class _Moments:
    """Sample moments shared by the estimator and the significance test."""

    xc: np.ndarray    # (n, T') centred channels
    dxc: np.ndarray   # (n, T') centred differences
    cov: np.ndarray   # (n, n)
    dcov: np.ndarray  # (n, n) dcov[k, i] = cov(X_k, dX_i)
    coef: np.ndarray  # (n, n) coef[:, i] solves cov @ coef[:, i] = dcov[:, i]
    resid: np.ndarray  # (n, T') residuals of the dX_i regressions
    dt: float


def _most_collinear_pair(C: np.ndarray, labels) -> tuple[str, str]:
    d = np.sqrt(np.clip(np.diag(C), 1e-300, None))
    R = np.abs(C / np.outer(d, d))
    np.fill_diagonal(R, -np.inf)
    zero = np.flatnonzero(np.diag(C) <= 0)
    if zero.size:
        k = int(zero[0])
        return labels[k], labels[k]
    j, i = np.unravel_index(np.argmax(R), R.shape)
    return labels[j], labels[i]


def _moments(X: TimeSeriesSet, step: int = 1) -> _Moments:
    n, T = X.data.shape
    if n < 2:
        raise InsufficientData("information flow needs at least 2 channels")
    if T < 10 * n:
        raise InsufficientData(f"need at least {10 * n} samples for {n} channels, got {T}")
    dx = first_difference(X, step).values
    x = X.data[:, :-step]
    C = covariance(x.T)
    dC = cross_covariance(x.T, dx.T)
    try:
        coef = solve_linear(C, dC)
    except SingularMatrix as exc:
        pair = _most_collinear_pair(C, X.labels)
        raise SingularCovariance(
            f"covariance is singular; check channels {pair[0]!r} and {pair[1]!r}", pair) from exc
    xc = x - x.mean(axis=1, keepdims=True)
    dxc = dx - dx.mean(axis=1, keepdims=True)
    resid = dxc - coef.T @ xc
    return _Moments(xc, dxc, C, dC, coef, resid, X.dt)


def estimate_information_flow(X: TimeSeriesSet, step: int = 1) -> FlowDecomposition:
    """Linear Liang-Kleeman flow between every ordered channel pair."""
    m = _moments(X, step)
    C, a = m.cov, m.coef
    diag = np.diag(C)
    # flow[j, i] = a[j, i] * C[i, j] / C[i, i]; C symmetric
    flow = a * C / diag[None, :]
    np.fill_diagonal(flow, 0.0)
    self_rate = np.diag(a).copy()
    g = m.dt * np.mean(m.resid**2, axis=1)
    noise_rate = g / (2.0 * diag)
    return FlowDecomposition(flow, self_rate, noise_rate, labels=list(X.labels))


def information_flow_cofactor(C: np.ndarray, dcov: np.ndarray) -> np.ndarray:
    """Flow matrix from the explicit cofactor expansion (reference path).

    O(n^5); meant for verification on small systems.
    """
    C = np.asarray(C, dtype=np.float64)
    n = C.shape[0]
    det = determinant(C)
    cof = np.empty_like(C)
    for j in range(n):
        for k in range(n):
            minor = np.delete(np.delete(C, j, axis=0), k, axis=1)
            cof[j, k] = (-1.0) ** (j + k) * determinant(minor)
    T = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            if i != j:
                T[j, i] = (cof[j] @ dcov[:, i]) / det * C[i, j] / C[i, i]
    return T


# Running record of every normalisation in this process: count and max |tau|.
TAU_AUDIT = {"checks": 0, "max_abs_tau": 0.0}


def normalize_flow(F: FlowDecomposition) -> FlowDecomposition:
    """Divide each incoming flow by the target's total entropy-rate budget.

    ``|tau| <= 1`` holds by construction (the budget contains ``|T|``); it is
    checked on every call and a violation raises :class:`NumericalError`.
    """
    absflow = np.abs(F.flow)
    offdiag = absflow.sum(axis=0) - np.abs(np.diag(F.flow))
    Z = np.abs(F.self_rate) + offdiag + np.abs(F.noise_rate)
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(Z[None, :] > 0, F.flow / Z[None, :], 0.0)
    np.fill_diagonal(tau, 0.0)
    peak = float(np.max(np.abs(tau))) if tau.size else 0.0
    TAU_AUDIT["checks"] += 1
    TAU_AUDIT["max_abs_tau"] = max(TAU_AUDIT["max_abs_tau"], peak)
    if not peak <= 1.0 + 1e-12:
        raise NumericalError(f"normalised flow exceeds 1 in magnitude ({peak!r})")
    return replace(F, tau=tau)


def stationary_bootstrap_indices(rng: CounterRNG, n_samples: int, block_length: float,
                                 count: int) -> np.ndarray:
    """Politis-Romano stationary bootstrap index arrays, shape (count, n_samples).

    Blocks have geometric lengths with mean ``block_length`` and wrap
    circularly around the end of the series.  Block-start flags and block
    start positions use 32-bit uniforms; starts are drawn only where a block
    begins, in row-major order.
    """
    p_new = 1.0 / float(block_length)
    itype = np.int32 if n_samples < 2**31 else np.int64
    if p_new >= 1.0:
        return rng.below32(n_samples, (count, n_samples)).astype(itype)
    t = np.arange(n_samples, dtype=itype)
    new_block = rng.bits32(count * n_samples).reshape(count, n_samples) < np.uint32(round(p_new * 2**32))
    new_block[:, 0] = True
    n_starts = int(new_block.sum())
    starts = np.zeros((count, n_samples), dtype=itype)
    starts[new_block] = rng.below32(n_samples, (n_starts,))
    last = np.maximum.accumulate(np.where(new_block, t[None, :], 0), axis=1)
    start_of_block = np.take_along_axis(starts, last, axis=1)
    return (start_of_block + t[None, :] - last) % itype(n_samples)


def _residual_null(m: _Moments, idx: np.ndarray) -> np.ndarray:
    """Null flows for every ordered pair under a batch of resamplings.

    For pair (j, i) the target difference is rebuilt as the fit of the model
    without channel j plus block-resampled residuals of that model.  The
    covariance matrix does not change, so the surrogate coefficient of X_j is
    ``u_j . r_ji[idx] / (T'-1)`` with ``u_j = (C^-1 Xc)_j`` and
    ``r_ji = resid_i + a[j, i] / Cinv[j, j] * u_j``.
    Returns shape (n, n, batch).
    """
    n, Tp = m.xc.shape
    Cinv = solve_linear(m.cov, np.eye(n))
    Cinv = 0.5 * (Cinv + Cinv.T)
    U = Cinv @ m.xc                                   # (n, T')
    b = idx.shape[0]
    G = np.empty((n, n, b))   # G[j, i, b] = u_j . resid_i[idx_b]
    Q = np.empty((n, b))      # Q[j, b] = u_j . u_j[idx_b]
    # one-dimensional gathers are several times faster than row gathers
    for i in range(n):
        G[:, i, :] = U @ m.resid[i][idx].T
        Q[i] = U[i][idx] @ U[i]
    c = m.coef / np.diag(Cinv)[:, None]                # c[j, i]
    a_null = (G + c[:, :, None] * Q[:, None, :]) / (Tp - 1)
    scale = m.cov / np.diag(m.cov)[None, :]            # C[i, j] / C[i, i] at [j, i]
    return a_null * scale[:, :, None]


def _source_null(m: _Moments, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Null flows from block-resampling the source channel itself.

    Returns ``(null, ok)``; ``null`` has shape (n, n, batch) and ``ok`` marks
    surrogates whose covariance stayed nonsingular, shape (n, batch).
    """
    n, Tp = m.xc.shape
    b = idx.shape[0]
    null = np.zeros((n, n, b))
    ok = np.ones((n, b), dtype=bool)
    for j in range(n):
        xs = m.xc[j][idx]                               # (b, T')
        xs = xs - xs.mean(axis=1, keepdims=True)
        cj = xs @ m.xc.T / (Tp - 1)                     # (b, n) cov(X*_j, X_k)
        cj[:, j] = np.sum(xs * xs, axis=1) / (Tp - 1)
        Cs = np.broadcast_to(m.cov, (b, n, n)).copy()
        Cs[:, j, :] = cj
        Cs[:, :, j] = cj
        dC = np.broadcast_to(m.dcov, (b, n, n)).copy()
        dC[:, j, :] = xs @ m.dxc.T / (Tp - 1)           # cov(X*_j, dX_i)
        lu, perm, _, singular = lu_factor(Cs)
        e = np.zeros((b, n))
        e[:, j] = 1.0
        y = lu_solve(lu, perm, e)                       # row j of Cs^-1
        a_j = np.einsum("bk,bki->bi", y, dC)            # a*[j, i]
        null[j] = (a_j * Cs[:, :, j] / np.diagonal(Cs, axis1=1, axis2=2)).T
        ok[j] = ~singular
    return null, ok


def significance_test(X: TimeSeriesSet, F: FlowDecomposition, cfg: SignificanceConfig,
                      step: int = 1, chunk: int = 200) -> FlowDecomposition:
    """Block-bootstrap p-values for every directed flow.

    ``p = (1 + #{|T_null| >= |T_obs|}) / (1 + surrogate_count)``.  Index
    arrays come from one seeded stream so the result depends only on the
    data and ``cfg``.
    """
    m = _moments(X, step)
    n, Tp = m.xc.shape
    obs = np.abs(F.flow)
    block = cfg.block_for(X.rate)
    rng = CounterRNG(cfg.seed).spawn(0x5160)
    exceed = np.zeros((n, n), dtype=np.int64)
    done = 0
    chunk_id = 0
    while done < cfg.surrogate_count:
        b = min(chunk, cfg.surrogate_count - done)
        for attempt in range(MAX_REDRAWS + 1):
            idx = stationary_bootstrap_indices(rng.spawn(chunk_id, attempt), Tp, block, b)
            if cfg.method == "residual":
                null = _residual_null(m, idx)
                ok = np.isfinite(null).all(axis=(0, 1))
            else:
                null, ok_pairs = _source_null(m, idx)
                ok = ok_pairs.all(axis=0) & np.isfinite(null).all(axis=(0, 1))
            if ok.all():
                break
            log.warning("redrawing %d singular surrogates", int((~ok).sum()))
        else:
            raise SurrogateFailure(f"surrogates stayed singular after {MAX_REDRAWS} redraws")
        exceed += (np.abs(null) >= obs[:, :, None]).sum(axis=2)
        done += b
        chunk_id += 1
    p = (1.0 + exceed) / (1.0 + cfg.surrogate_count)
    np.fill_diagonal(p, 1.0)
    return replace(F, p_values=p)


def analyze(X: TimeSeriesSet, cfg: SignificanceConfig | None = None, step: int = 1) -> FlowDecomposition:
    """Flow, normalisation and (when ``cfg`` is given) p-values in one call."""
    F = normalize_flow(estimate_information_flow(X, step))
    if cfg is not None:
        F = significance_test(X, F, cfg, step)
    return F


def _lagged(x: np.ndarray, order: int) -> np.ndarray:
    T = x.shape[-1]
    return np.stack([x[order - k:T - k] for k in range(1, order + 1)], axis=1)


def _rss(design: np.ndarray, y: np.ndarray) -> float:
    coef, _, rank, _ = np.linalg.lstsq(design, y, rcond=None)
    if rank < design.shape[1]:
        raise RankError(f"lag matrix rank {rank} < {design.shape[1]} columns")
    r = y - design @ coef
    return float(r @ r)


def granger_causality(X: TimeSeriesSet, order: int = 5):
    """Pairwise Granger F-tests.

    Returns ``(F, p)`` with ``[source, target]`` indexing; the diagonal of
    both is left at 0.
    """
    if order < 1:
        raise InvalidOrder(f"Granger order must be >= 1, got {order}")
    n, T = X.data.shape
    if T < 20 * order:
        raise InsufficientData(f"need at least {20 * order} samples for order {order}")
    N = T - order
    dof = N - 2 * order - 1
    ones = np.ones((N, 1))
    lags = [_lagged(X.data[i], order) for i in range(n)]
    Fs = np.zeros((n, n))
    ps = np.zeros((n, n))
    for i in range(n):
        y = X.data[i, order:]
        restricted = np.hstack([ones, lags[i]])
        rss_r = _rss(restricted, y)
        for j in range(n):
            if j == i:
                continue
            rss_f = _rss(np.hstack([restricted, lags[j]]), y)
            f = ((rss_r - rss_f) / order) / (rss_f / dof) if rss_f > 0 else np.inf
            Fs[j, i] = max(f, 0.0)
            ps[j, i] = stats.f.sf(Fs[j, i], order, dof)
    return Fs, ps
