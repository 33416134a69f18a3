# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: wealth compounding and the reflected Euler grid.

Operation order matches `_kernels_py` exactly (no reassociation, no
fast-math), so the two backends agree bit-for-bit.
"""
import numpy as np

cimport numpy as cnp

cnp.import_array()


def compound_returns(r):
    r = np.ascontiguousarray(r, dtype=np.float64)
    cdef double[:, ::1] rv = r
    cdef Py_ssize_t p = rv.shape[0], k = rv.shape[1]
    wealth_arr = np.empty((p, k + 1))
    first_arr = np.empty(p, dtype=np.int64)
    cdef double[:, ::1] wealth = wealth_arr
    cdef long long[::1] first = first_arr
    cdef Py_ssize_t i, j
    cdef double w, f
    cdef long long bad
    for i in range(p):
        w = 1.0
        wealth[i, 0] = 1.0
        bad = -1
        for j in range(k):
            f = 1.0 + rv[i, j]
            if f <= 0.0 and bad < 0:
                bad = j
            w = w * f
            wealth[i, j + 1] = w
        first[i] = bad
    return wealth_arr, first_arr


def bessel_euler(z, double dt, double s0, double floor):
    z = np.ascontiguousarray(z, dtype=np.float64)
    cdef double[:, ::1] zv = z
    cdef Py_ssize_t p = zv.shape[0], k = zv.shape[1]
    out_arr = np.empty((p, k + 1))
    cdef double[:, ::1] out = out_arr
    cdef double sqdt = np.sqrt(dt)
    cdef Py_ssize_t i, j
    cdef double s
    for i in range(p):
        s = s0
        out[i, 0] = s
        for j in range(k):
            s = (s + dt / s) + sqdt * zv[i, j]
            if s < 0.0:
                s = -s
            if s < floor:
                s = floor
            out[i, j + 1] = s
    return out_arr
