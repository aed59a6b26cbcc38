# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled forward kernel for the recurrent value model.

Same contract as _recurrent_np.lstm_forward; used for the prediction hot
path during search, where millions of candidate states are evaluated.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, tanh

cnp.import_array()


cdef inline double _sigmoid(double x) nogil:
    return 1.0 / (1.0 + exp(-x))


def lstm_forward(double[:, :, ::1] X, double[:, ::1] Wx, double[:, ::1] Wh,
                 double[::1] b, double[::1] w, double b_out):
    cdef Py_ssize_t B = X.shape[0]
    cdef Py_ssize_t T = X.shape[1]
    cdef Py_ssize_t F = X.shape[2]
    cdef Py_ssize_t H = w.shape[0]
    cdef cnp.ndarray[double, ndim=1] raw_arr = np.full(B, T * b_out, dtype=np.float64)
    cdef double[::1] raw = raw_arr
    cdef cnp.ndarray h_arr = np.zeros(H, dtype=np.float64)
    cdef cnp.ndarray c_arr = np.zeros(H, dtype=np.float64)
    cdef cnp.ndarray z_arr = np.zeros(4 * H, dtype=np.float64)
    cdef double[::1] h = h_arr
    cdef double[::1] c = c_arr
    cdef double[::1] z = z_arr
    cdef Py_ssize_t bi, t, j, k
    cdef double gi, gf, gg, go, acc, x

    with nogil:
        for bi in range(B):
            for j in range(H):
                h[j] = 0.0
                c[j] = 0.0
            for t in range(T):
                for j in range(4 * H):
                    z[j] = b[j]
                for k in range(F):
                    x = X[bi, t, k]
                    if x != 0.0:
                        for j in range(4 * H):
                            z[j] += x * Wx[k, j]
                for k in range(H):
                    x = h[k]
                    if x != 0.0:
                        for j in range(4 * H):
                            z[j] += x * Wh[k, j]
                for j in range(H):
                    gi = _sigmoid(z[j])
                    gf = _sigmoid(z[H + j])
                    gg = tanh(z[2 * H + j])
                    go = _sigmoid(z[3 * H + j])
                    c[j] = gf * c[j] + gi * gg
                    h[j] = go * tanh(c[j])
                acc = 0.0
                for j in range(H):
                    acc += h[j] * w[j]
                raw[bi] += acc
    return raw_arr
