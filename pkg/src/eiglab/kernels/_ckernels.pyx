# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Cython implementations of the hot kernels.

Same contracts as `_pykernels`; loops are fused so the log-density matrix
and its reduction avoid intermediate temporaries. Summation is plain
left-to-right, which is deterministic but can differ from numpy's pairwise
summation in the last ulp.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, INFINITY

cnp.import_array()

cdef double HALF_LOG_2PI = 0.9189385332046727417803297364056176398


def normal_logpdf_mat(y, mu, double sigma):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y_ = np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t n = y_.shape[0]
    cdef cnp.ndarray mu_arr = np.ascontiguousarray(mu, dtype=np.float64)
    cdef double c = -HALF_LOG_2PI - log(sigma)
    cdef double inv = 1.0 / sigma
    cdef Py_ssize_t i, j, m
    cdef double z
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mu1
    cdef cnp.ndarray[cnp.float64_t, ndim=2] mu2
    if mu_arr.ndim == 1:
        mu1 = mu_arr
        m = mu1.shape[0]
        out = np.empty((n, m), dtype=np.float64)
        for i in range(n):
            for j in range(m):
                z = (y_[i] - mu1[j]) * inv
                out[i, j] = c - 0.5 * z * z
    else:
        mu2 = mu_arr
        m = mu2.shape[1]
        out = np.empty((n, m), dtype=np.float64)
        for i in range(n):
            for j in range(m):
                z = (y_[i] - mu2[i, j]) * inv
                out[i, j] = c - 0.5 * z * z
    return out


def normal_logpdf_vec(y, mu, double sigma):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y_ = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] mu_ = np.ascontiguousarray(mu, dtype=np.float64)
    cdef Py_ssize_t n = y_.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double c = -HALF_LOG_2PI - log(sigma)
    cdef double inv = 1.0 / sigma
    cdef double z
    cdef Py_ssize_t i
    for i in range(n):
        z = (y_[i] - mu_[i]) * inv
        out[i] = c - 0.5 * z * z
    return out


def logmeanexp_2d(a):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a_ = np.ascontiguousarray(a, dtype=np.float64)
    cdef Py_ssize_t n = a_.shape[0]
    cdef Py_ssize_t m = a_.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef Py_ssize_t i, j
    cdef double hi, acc
    for i in range(n):
        hi = -INFINITY
        for j in range(m):
            if a_[i, j] > hi:
                hi = a_[i, j]
        if hi == -INFINITY or hi != hi:
            out[i] = hi
            continue
        acc = 0.0
        for j in range(m):
            acc += exp(a_[i, j] - hi)
        out[i] = hi + log(acc / m)
    return out


def logmeanexp_1d(a):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] a_ = np.ascontiguousarray(a, dtype=np.float64)
    return float(logmeanexp_2d(a_.reshape(1, -1))[0])


def systematic_resample(weights, double u):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] w = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t p = w.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(p, dtype=np.int64)
    cdef double cum = w[0]
    cdef double pos
    cdef Py_ssize_t i, j = 0
    for i in range(p):
        pos = (u + i) / p
        while cum <= pos and j < p - 1:
            j += 1
            cum += w[j]
        out[i] = j
    return out
