# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Mirrors ``_kernels_py`` function for function."""

import numpy as np
cimport numpy as cnp
from libc.math cimport isfinite, sqrt

cnp.import_array()


def var_recursion(const double[:, ::1] A, const double[::1] x0,
                  const double[:, ::1] noise, double[:, ::1] out):
    """Fill ``out[t+1] = A @ out[t] + noise[t]`` from ``out[0] = x0``.

    Returns the first step index whose state is non-finite, or -1.
    """
    cdef Py_ssize_t d = A.shape[0]
    cdef Py_ssize_t T = noise.shape[0]
    cdef Py_ssize_t t, i, j
    cdef double acc
    cdef bint ok

    for i in range(d):
        out[0, i] = x0[i]
        if not isfinite(x0[i]):
            return 0
    for t in range(T):
        ok = True
        for i in range(d):
            acc = 0.0
            for j in range(d):
                acc = acc + A[i, j] * out[t, j]
            acc = acc + noise[t, i]
            out[t + 1, i] = acc
            if not isfinite(acc):
                ok = False
        if not ok:
            return t + 1
    return -1


def max_sign_vertex(const double[:, ::1] A):
    """Maximise ``||A v||_2^2`` over ``v`` in ``{-1, +1}^n`` by Gray-code walk.

    Only half the cube is visited (``v`` and ``-v`` give the same value).
    Returns ``(best_value_sq, best_vertex)``; the value is recomputed from
    scratch at the winning vertex so incremental drift does not leak out.
    """
    cdef Py_ssize_t p = A.shape[0]
    cdef Py_ssize_t n = A.shape[1]
    cdef Py_ssize_t i, j, r
    cdef unsigned long long step, count, g
    cdef double val, best, acc
    cdef double[::1] y = np.empty(p)
    cdef double[::1] v = np.ones(n)
    cdef double[::1] best_v = np.ones(n)

    if n == 0:
        return 0.0, np.ones(0)
    for r in range(p):
        acc = 0.0
        for j in range(n):
            acc = acc + A[r, j]
        y[r] = acc
    best = 0.0
    for r in range(p):
        best = best + y[r] * y[r]

    count = (<unsigned long long>1) << (n - 1)
    for step in range(1, count):
        # index of the lowest set bit
        g = step
        j = 0
        while (g & 1) == 0:
            g >>= 1
            j += 1
        for r in range(p):
            y[r] = y[r] - 2.0 * v[j] * A[r, j]
        v[j] = -v[j]
        val = 0.0
        for r in range(p):
            val = val + y[r] * y[r]
        if val > best:
            best = val
            for i in range(n):
                best_v[i] = v[i]

    best = 0.0
    for r in range(p):
        acc = 0.0
        for j in range(n):
            acc = acc + A[r, j] * best_v[j]
        best = best + acc * acc
    return best, np.asarray(best_v).copy()
