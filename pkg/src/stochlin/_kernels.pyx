# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels.

Must stay bit-compatible with ``_kernels_py`` for the Philox words. Normals
agree wherever numpy's and libm's log/sin/cos agree (to the last ulp in
general); the Gagliardo sums agree to summation round-off.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport cos, fabs, log, pow, sin, sqrt
from libc.stdint cimport uint32_t, uint64_t

cnp.import_array()

BACKEND = "cython"

cdef uint64_t PHILOX_M0 = 0xD2511F53U
cdef uint64_t PHILOX_M1 = 0xCD9E8D57U
cdef uint32_t PHILOX_W0 = 0x9E3779B9U
cdef uint32_t PHILOX_W1 = 0xBB67AE85U
cdef double INV_2_53 = 1.0 / 9007199254740992.0
cdef double TWO_PI = 6.283185307179586


cdef inline void _philox10(uint32_t* c, uint32_t k0, uint32_t k1) noexcept nogil:
    cdef uint64_t p0, p1
    cdef uint32_t x0, x1, x2, x3
    cdef int r
    for r in range(10):
        if r > 0:
            k0 = <uint32_t>(k0 + PHILOX_W0)
            k1 = <uint32_t>(k1 + PHILOX_W1)
        p0 = PHILOX_M0 * <uint64_t>c[0]
        p1 = PHILOX_M1 * <uint64_t>c[2]
        x0 = <uint32_t>(p1 >> 32) ^ c[1] ^ k0
        x1 = <uint32_t>p1
        x2 = <uint32_t>(p0 >> 32) ^ c[3] ^ k1
        x3 = <uint32_t>p0
        c[0] = x0
        c[1] = x1
        c[2] = x2
        c[3] = x3


def philox4x32(cnp.uint32_t[:, ::1] counters, uint32_t k0, uint32_t k1):
    """Apply Philox4x32-10 to each row of a ``(N, 4)`` counter array."""
    cdef Py_ssize_t n = counters.shape[0], i
    out = np.empty((n, 4), dtype=np.uint32)
    cdef cnp.uint32_t[:, ::1] o = out
    cdef uint32_t c[4]
    with nogil:
        for i in range(n):
            c[0] = counters[i, 0]
            c[1] = counters[i, 1]
            c[2] = counters[i, 2]
            c[3] = counters[i, 3]
            _philox10(c, k0, k1)
            o[i, 0] = c[0]
            o[i, 1] = c[1]
            o[i, 2] = c[2]
            o[i, 3] = c[3]
    return out


cdef inline void _pair(uint32_t* c, double* z0, double* z1, bint need_second) noexcept nogil:
    cdef uint64_t m1 = ((<uint64_t>c[0]) | ((<uint64_t>c[1]) << 32)) >> 11
    cdef uint64_t m2 = ((<uint64_t>c[2]) | ((<uint64_t>c[3]) << 32)) >> 11
    cdef double u1 = (<double>m1 + 1.0) * INV_2_53
    cdef double u2 = (<double>m2) * INV_2_53
    cdef double r = sqrt(-2.0 * log(u1))
    cdef double theta = TWO_PI * u2
    z0[0] = r * cos(theta)
    if need_second:
        z1[0] = r * sin(theta)


def philox_normals(uint64_t seed, cnp.uint64_t[::1] paths, uint64_t j0, Py_ssize_t count):
    """Standard normals ``j0 .. j0 + count - 1`` of each path's stream.

    Normal ``j`` is element ``j % 2`` of the Box-Muller pair built from the
    Philox block with counter ``(j // 2, path)`` keyed by ``seed``.
    Returns a ``(P, count)`` float64 array.
    """
    cdef Py_ssize_t P = paths.shape[0], a, j
    cdef uint32_t k0 = <uint32_t>(seed & 0xFFFFFFFFU)
    cdef uint32_t k1 = <uint32_t>(seed >> 32)
    out = np.empty((P, count), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef uint32_t c[4]
    cdef uint64_t pid, b, jj
    cdef double z0, z1
    with nogil:
        for a in range(P):
            pid = paths[a]
            j = 0
            while j < count:
                jj = j0 + <uint64_t>j
                b = jj >> 1
                c[0] = <uint32_t>(b & 0xFFFFFFFFU)
                c[1] = <uint32_t>(b >> 32)
                c[2] = <uint32_t>(pid & 0xFFFFFFFFU)
                c[3] = <uint32_t>(pid >> 32)
                _philox10(c, k0, k1)
                if jj & 1:
                    _pair(c, &z0, &z1, True)
                    o[a, j] = z1
                    j += 1
                else:
                    _pair(c, &z0, &z1, j + 1 < count)
                    o[a, j] = z0
                    if j + 1 < count:
                        o[a, j + 1] = z1
                    j += 2
    return out


def gagliardo_lag_sums(double[:, ::1] values, double[::1] lag_weight, double p):
    """Per-row ``sum_{l>=1} lag_weight[l] * sum_i |v[i+l] - v[i]|**p``."""
    cdef Py_ssize_t P = values.shape[0], N = values.shape[1]
    cdef Py_ssize_t a, l, i
    cdef int ip = <int>p, q
    cdef bint integer_p = (p == <double>ip) and 1 <= ip <= 16
    cdef double d, acc, lag_acc, term
    out = np.zeros(P, dtype=np.float64)
    cdef double[::1] o = out
    with nogil:
        for a in range(P):
            acc = 0.0
            for l in range(1, N):
                lag_acc = 0.0
                for i in range(N - l):
                    d = fabs(values[a, i + l] - values[a, i])
                    if integer_p:
                        term = d
                        for q in range(1, ip):
                            term = term * d
                    else:
                        term = pow(d, p)
                    lag_acc = lag_acc + term
                acc = acc + lag_weight[l] * lag_acc
            o[a] = acc
    return out
