"""Independent reference computations used to derive frozen test values."""

import itertools

import numpy as np


def bivariate_flow(x1, x2, dt=1.0):
    """Two-variable linear information flow written out term by term.

    Returns ``(T_1to2, T_2to1)`` using forward differences and N-1 covariances.
    """
    a, b = x1[:-1], x2[:-1]
    d1, d2 = np.diff(x1) / dt, np.diff(x2) / dt

    def c(u, v):
        return np.sum((u - u.mean()) * (v - v.mean())) / (len(u) - 1)

    C11, C22, C12 = c(a, a), c(b, b), c(a, b)
    t12 = (C22 * C12 * c(a, d2) - C12**2 * c(b, d2)) / (C22**2 * C11 - C22 * C12**2)
    t21 = (C11 * C12 * c(b, d1) - C12**2 * c(a, d1)) / (C11**2 * C22 - C11 * C12**2)
    return t12, t21


def wilcoxon_enumerate(d):
    """Two-sided signed-rank p-value by listing every sign pattern."""
    d = np.asarray(d, dtype=float)
    d = d[d != 0]
    absd = np.abs(d)
    ranks = np.array([np.sum(absd < v) + (np.sum(absd == v) + 1) / 2.0 for v in absd])
    w = ranks[d > 0].sum()
    null = [sum(r for r, s in zip(ranks, signs) if s) for signs in itertools.product([0, 1], repeat=len(d))]
    null = np.array(null)
    return min(1.0, 2 * min(np.mean(null <= w + 1e-9), np.mean(null >= w - 1e-9)))


def macro_f1(C):
    f = []
    for k in range(len(C)):
        tp = C[k][k]
        fp = sum(C[j][k] for j in range(len(C))) - tp
        fn = sum(C[k]) - tp
        f.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    return sum(f) / len(f)
