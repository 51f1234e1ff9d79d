# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernel backend: binary entropy and stack moments.

Keeps the exact accumulation order of the numpy backend (ascending pass
index per pixel) so the two backends differ only through libm rounding.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport log, log1p

cnp.import_array()

BACKEND_NAME = "cython"


cdef inline double _entropy1(double p) nogil:
    if p <= 0.0 or p >= 1.0:
        return 0.0
    return -(p * log(p) + (1.0 - p) * log1p(-p))


def entropy_flat(const double[::1] p not None):
    cdef Py_ssize_t n = p.shape[0]
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            out[i] = _entropy1(p[i])
    return out_arr


def mc_moments(const double[:, ::1] stack not None):
    cdef Py_ssize_t T = stack.shape[0]
    cdef Py_ssize_t n = stack.shape[1]
    mean_arr = np.zeros(n, dtype=np.float64)
    ent_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] mean = mean_arr
    cdef double[::1] ent = ent_arr
    cdef Py_ssize_t t, i
    with nogil:
        for t in range(T):
            for i in range(n):
                mean[i] += stack[t, i]
                ent[i] += _entropy1(stack[t, i])
        for i in range(n):
            mean[i] /= T
            ent[i] /= T
    return mean_arr, ent_arr


def tta_moments(const double[:, ::1] stack not None):
    cdef Py_ssize_t K = stack.shape[0]
    cdef Py_ssize_t n = stack.shape[1]
    mean_arr = np.zeros(n, dtype=np.float64)
    var_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] mean = mean_arr
    cdef double[::1] var = var_arr
    cdef Py_ssize_t k, i
    cdef double d
    with nogil:
        for k in range(K):
            for i in range(n):
                mean[i] += stack[k, i]
        for i in range(n):
            mean[i] /= K
        for k in range(K):
            for i in range(n):
                d = stack[k, i] - mean[i]
                var[i] += d * d
        for i in range(n):
            var[i] /= K
    return mean_arr, var_arr
