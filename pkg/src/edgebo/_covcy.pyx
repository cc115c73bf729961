# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled covariance backend; semantics identical to edgebo._covnp."""
import numpy as np

cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def mixed_cov(double[:, ::1] xa, cnp.uint8_t[::1] ka, cnp.int64_t[::1] da,
              double[:, ::1] xb, cnp.uint8_t[::1] kb, cnp.int64_t[::1] db,
              double signal_variance, double[::1] inv_len2):
    cdef Py_ssize_t na = xa.shape[0]
    cdef Py_ssize_t nb = xb.shape[0]
    cdef Py_ssize_t d = xa.shape[1]
    out_arr = np.empty((na, nb), dtype=np.float64)
    cdef double[:, ::1] out = out_arr
    cdef Py_ssize_t a, b, g
    cdef double s, k, diff, fa, fb, v
    for a in range(na):
        for b in range(nb):
            s = 0.0
            for g in range(d):
                diff = xa[a, g] - xb[b, g]
                s += diff * diff * inv_len2[g]
            k = signal_variance * exp(-0.5 * s)
            if ka[a] == 0 and kb[b] == 0:
                v = k
            elif ka[a] == 1 and kb[b] == 0:
                diff = xa[a, da[a]] - xb[b, da[a]]
                v = -diff * inv_len2[da[a]] * k
            elif ka[a] == 0:
                diff = xa[a, db[b]] - xb[b, db[b]]
                v = diff * inv_len2[db[b]] * k
            else:
                fa = -(xa[a, da[a]] - xb[b, da[a]]) * inv_len2[da[a]]
                fb = (xa[a, db[b]] - xb[b, db[b]]) * inv_len2[db[b]]
                v = k * (fa * fb + (inv_len2[da[a]] if da[a] == db[b] else 0.0))
            out[a, b] = v
    return out_arr
