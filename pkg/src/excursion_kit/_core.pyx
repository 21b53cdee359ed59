# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels; see ``_fallback.py`` for the reference semantics."""
import numpy as np
from libc.math cimport exp, log1p, fabs


def logistic_terms(const double[:, ::1] X, const double[::1] y, const double[::1] w,
                   const double[::1] beta, double lam):
    cdef Py_ssize_t n = X.shape[0], d = X.shape[1], i, j, k
    score_arr = np.zeros(d)
    info_arr = np.zeros((d, d))
    cdef double[::1] score = score_arr
    cdef double[:, ::1] info = info_arr
    cdef double eta, e, sp, p, r, v, xj, loglik = 0.0
    with nogil:
        for i in range(n):
            eta = 0.0
            for j in range(d):
                eta = eta + X[i, j] * beta[j]
            # one exp serves both the sigmoid and the softplus
            e = exp(-fabs(eta))
            if eta >= 0:
                p = 1.0 / (1.0 + e)
                sp = eta + log1p(e)
            else:
                p = e / (1.0 + e)
                sp = log1p(e)
            loglik = loglik + w[i] * (y[i] * eta - sp)
            r = w[i] * (y[i] - p)
            v = w[i] * p * (1.0 - p)
            for j in range(d):
                xj = X[i, j]
                score[j] = score[j] + xj * r
                for k in range(j + 1):
                    info[j, k] = info[j, k] + v * xj * X[i, k]
        for j in range(d):
            score[j] = score[j] - lam * beta[j]
            loglik = loglik - 0.5 * lam * beta[j] * beta[j]
            info[j, j] = info[j, j] + lam
            for k in range(j):
                info[k, j] = info[j, k]
    return loglik, score_arr, info_arr


def grouped_cumprod(const double[::1] values, const long long[::1] starts):
    cdef Py_ssize_t g, i, G = starts.shape[0] - 1
    out_arr = np.empty(values.shape[0])
    cdef double[::1] out = out_arr
    cdef double acc
    with nogil:
        for g in range(G):
            acc = 1.0
            for i in range(starts[g], starts[g + 1]):
                acc = acc * values[i]
                out[i] = acc
    return out_arr


def group_sums(const double[::1] values, const long long[::1] starts):
    cdef Py_ssize_t g, i, G = starts.shape[0] - 1
    if G < 0:
        G = 0
    out_arr = np.zeros(G)
    cdef double[::1] out = out_arr
    cdef double acc
    with nogil:
        for g in range(G):
            acc = 0.0
            for i in range(starts[g], starts[g + 1]):
                acc = acc + values[i]
            out[g] = acc
    return out_arr


def clamp(const double[::1] values, double lo, double hi):
    cdef Py_ssize_t i, n = values.shape[0]
    out_arr = np.empty(n)
    cdef double[::1] out = out_arr
    cdef long long altered = 0
    cdef double v
    with nogil:
        for i in range(n):
            v = values[i]
            if v < lo:
                out[i] = lo
                altered += 1
            elif v > hi:
                out[i] = hi
                altered += 1
            else:
                out[i] = v
    return out_arr, int(altered)
