"""Dense linear algebra and statistics kernels.

The LU routines work on stacks of matrices (leading batch axes) so that the
bootstrap in :mod:`lfgnn.causality` can factor thousands of small covariance
matrices in one vectorised sweep.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InsufficientData, ShapeError, SingularMatrix

PIVOT_RTOL = 1e-12


@dataclass
class TimeSeriesSet:
    """Multichannel recording, ``data`` has shape (channels, samples)."""

    data: np.ndarray
    rate: float
    labels: list[str] = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 1:
            self.data = self.data[None, :]
        if self.data.ndim != 2:
            raise ShapeError(f"expected (channels, samples), got {self.data.shape}")
        if not self.labels:
            self.labels = [f"ch{i}" for i in range(self.data.shape[0])]
        if len(self.labels) != self.data.shape[0]:
            raise ShapeError("one label per channel required")
        if self.rate <= 0:
            raise ValueError("sampling rate must be positive")

    @property
    def n_channels(self) -> int:
        return self.data.shape[0]

    @property
    def n_samples(self) -> int:
        return self.data.shape[1]

    @property
    def dt(self) -> float:
        return 1.0 / self.rate

    def select(self, idx) -> "TimeSeriesSet":
        idx = list(idx)
        return TimeSeriesSet(self.data[idx], self.rate, [self.labels[i] for i in idx])


@dataclass
class DifferenceSeries:
    values: np.ndarray  # (channels, samples - step)
    dt: float
    step: int = 1


def covariance(X: np.ndarray) -> np.ndarray:
    """Unbiased covariance of a (samples, vars) matrix.

    Built from the upper triangle so the result is exactly symmetric.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.shape[0] < 2:
        raise InsufficientData("covariance needs at least 2 samples")
    Xc = X - X.mean(axis=0)
    C = Xc.T @ Xc / (X.shape[0] - 1)
    upper = np.triu(C)
    return upper + np.triu(C, 1).T


def cross_covariance(X: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """cov(X[:, k], Y[:, m]) for (samples, vars) inputs, N-1 denominator."""
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.float64)
    if X.shape[0] != Y.shape[0]:
        raise ShapeError("sample counts differ")
    if X.shape[0] < 2:
        raise InsufficientData("covariance needs at least 2 samples")
    Xc = X - X.mean(axis=0)
    Yc = Y - Y.mean(axis=0)
    return Xc.T @ Yc / (X.shape[0] - 1)


def lu_factor(M: np.ndarray):
    """LU with partial pivoting on a stack of square matrices.

    Returns ``(lu, perm, sign, singular)``: combined unit-lower/upper factors,
    the row permutation, the permutation parity (+1/-1) and a boolean mask of
    matrices whose pivot fell below ``1e-12 * max|entry|``.
    """
    A = np.array(M, dtype=np.float64, copy=True)
    if A.ndim < 2 or A.shape[-1] != A.shape[-2]:
        raise ShapeError(f"square matrix required, got shape {A.shape}")
    n = A.shape[-1]
    batch = A.shape[:-2]
    A = A.reshape((-1, n, n))
    nb = A.shape[0]
    perm = np.tile(np.arange(n), (nb, 1))
    sign = np.ones(nb)
    scale = np.abs(A).reshape(nb, -1).max(axis=1) if n else np.zeros(nb)
    singular = np.zeros(nb, dtype=bool)
    rows = np.arange(nb)
    for k in range(n):
        p = k + np.argmax(np.abs(A[:, k:, k]), axis=1)
        swap = p != k
        if swap.any():
            r = rows[swap]
            A[r, k], A[r, p[swap]] = A[r, p[swap]].copy(), A[r, k].copy()
            perm[r, k], perm[r, p[swap]] = perm[r, p[swap]], perm[r, k].copy()
            sign[swap] = -sign[swap]
        piv = A[:, k, k]
        small = np.abs(piv) <= PIVOT_RTOL * scale
        singular |= small
        safe = np.where(piv == 0.0, 1.0, piv)
        if k + 1 < n:
            mult = A[:, k + 1:, k] / safe[:, None]
            mult[piv == 0.0] = 0.0
            A[:, k + 1:, k] = mult
            A[:, k + 1:, k + 1:] -= mult[:, :, None] * A[:, k, None, k + 1:]
    return (A.reshape(batch + (n, n)), perm.reshape(batch + (n,)),
            sign.reshape(batch), singular.reshape(batch))


def determinant(M: np.ndarray) -> float:
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"determinant of non-square matrix {M.shape}")
    if M.shape[0] == 0:
        return 1.0
    lu, _, sign, _ = lu_factor(M)
    return float(sign * np.prod(np.diag(lu)))


def lu_solve(lu: np.ndarray, perm: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve with factors from :func:`lu_factor`; ``b`` is (..., n) or (..., n, r)."""
    n = lu.shape[-1]
    vector = b.ndim == lu.ndim - 1
    B = b[..., None] if vector else b
    y = np.take_along_axis(B, perm[..., :, None], axis=-2).astype(np.float64)
    for i in range(1, n):
        y[..., i, :] -= np.einsum("...k,...kr->...r", lu[..., i, :i], y[..., :i, :])
    for i in range(n - 1, -1, -1):
        if i + 1 < n:
            y[..., i, :] -= np.einsum("...k,...kr->...r", lu[..., i, i + 1:], y[..., i + 1:, :])
        y[..., i, :] /= lu[..., i, i, None]
    return y[..., 0] if vector else y


def solve_linear(M: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Solve ``M a = b`` for a single square system (``b`` vector or matrix)."""
    M = np.asarray(M, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"square matrix required, got {M.shape}")
    if b.shape[0] != M.shape[0]:
        raise ShapeError(f"rhs length {b.shape[0]} does not match {M.shape[0]}")
    lu, perm, _, singular = lu_factor(M)
    if singular:
        raise SingularMatrix("matrix is numerically singular")
    return lu_solve(lu, perm, b)


def first_difference(X: TimeSeriesSet, step: int = 1) -> DifferenceSeries:
    """Forward difference (X[t+step] - X[t]) / (step * dt) per channel."""
    if step < 1:
        raise ValueError("step must be >= 1")
    if X.n_samples < step + 1:
        raise InsufficientData(f"need at least {step + 1} samples, got {X.n_samples}")
    d = X.data
    vals = (d[:, step:] - d[:, :-step]) / (step * X.dt)
    return DifferenceSeries(vals, X.dt, step)
