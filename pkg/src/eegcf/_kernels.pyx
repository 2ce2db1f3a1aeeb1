# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled candidate scan for the single-swap search."""
import numpy as np
from libc.math cimport exp


cdef inline double _prob(const double[:, ::1] B, const double[:, ::1] A, const double[::1] z,
                         Py_ssize_t q, Py_ssize_t d, Py_ssize_t t, double hw) noexcept nogil:
    cdef Py_ssize_t c, C = z.shape[0]
    cdef double vt = z[t] + (A[d, t] - B[q, t]) / hw
    cdef double s = 0.0
    for c in range(C):
        s += exp((z[c] + (A[d, c] - B[q, c]) / hw) - vt)
    return 1.0 / s


def target_prob_matrix(const double[:, ::1] B, const double[:, ::1] A, const double[::1] z,
                       Py_ssize_t target, double hw):
    cdef Py_ssize_t nq = B.shape[0], nd = A.shape[0], q, d
    out = np.empty((nq, nd), dtype=np.float64)
    cdef double[:, ::1] o = out
    with nogil:
        for q in range(nq):
            for d in range(nd):
                o[q, d] = _prob(B, A, z, q, d, target, hw)
    return out


def best_candidate(const double[:, ::1] B, const double[:, ::1] A, const double[::1] z,
                   Py_ssize_t target, double hw, const unsigned char[::1] edited):
    cdef Py_ssize_t nq = B.shape[0], nd = A.shape[0], q, d
    cdef Py_ssize_t bq = -1, bd = -1
    cdef double best = -1.0, p
    with nogil:
        for q in range(nq):
            if edited[q]:
                continue
            for d in range(nd):
                p = _prob(B, A, z, q, d, target, hw)
                if p > best:
                    best = p
                    bq = q
                    bd = d
    if bq < 0:
        return -1, -1, float("nan")
    return bq, bd, best
