"""Pure numpy implementations of the hot kernels.

Every function here has a twin in ``_core.pyx`` with the same signature and
results equal to floating-point rounding.
"""
import numpy as np


def logistic_terms(X, y, w, beta, lam):
    """Penalized Bernoulli log-likelihood, score and information.

    Returns ``(loglik, score, info)`` where ``info`` is the negative Hessian.
    """
    eta = X @ beta
    p = 0.5 * (1.0 + np.tanh(0.5 * eta))
    softplus = np.logaddexp(0.0, eta)
    loglik = float(np.dot(w, y * eta - softplus)) - 0.5 * lam * float(beta @ beta)
    score = X.T @ (w * (y - p)) - lam * beta
    info = (X * (w * p * (1.0 - p))[:, None]).T @ X
    info[np.diag_indices_from(info)] += lam
    return loglik, score, info


def grouped_cumprod(values, starts):
    out = np.empty_like(values, dtype=float)
    for g in range(len(starts) - 1):
        a, b = starts[g], starts[g + 1]
        out[a:b] = np.cumprod(values[a:b])
    return out


def group_sums(values, starts):
    starts = np.asarray(starts)
    if len(starts) < 2:
        return np.zeros(0)
    values = np.asarray(values, dtype=float)
    sums = np.zeros(len(starts) - 1)
    nonempty = starts[1:] > starts[:-1]
    if np.any(nonempty):
        # consecutive nonempty starts delimit each group, so reduceat sees no empty slices
        sums[nonempty] = np.add.reduceat(values, starts[:-1][nonempty])
    return sums


def clamp(values, lo, hi):
    values = np.asarray(values, dtype=float)
    out = np.clip(values, lo, hi)
    altered = int(np.count_nonzero((values < lo) | (values > hi)))
    return out, altered
