# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled training hot kernels: BLAS-backed affine layers with fused
bias/ReLU, reverse-layer products, and an in-place Adam update.

Mirrors kernels/numpy_backend.py operation for operation so the two
backends agree to floating-point roundoff.
"""

from libc.math cimport sqrt

import numpy as np

from scipy.linalg.cython_blas cimport dgemm

NAME = "compiled"


cdef inline void _gemm(char ta, char tb, int m, int n, int k,
                       double* a, int lda, double* b, int ldb,
                       double* c, int ldc) noexcept nogil:
    # column-major BLAS; callers pass row-major operands pre-swapped
    cdef double alpha = 1.0
    cdef double beta = 0.0
    dgemm(&ta, &tb, &m, &n, &k, &alpha, a, &lda, b, &ldb, &beta, c, &ldc)


def affine(double[:, ::1] x, double[:, ::1] w, double[::1] b, bint relu):
    """x @ w + b with optional fused ReLU."""
    cdef int nb = x.shape[0]
    cdef int ni = x.shape[1]
    cdef int no = w.shape[1]
    out_arr = np.empty((nb, no))
    cdef double[:, ::1] out = out_arr
    cdef int i, j
    cdef double v
    with nogil:
        # row-major C = A @ B  <=>  col-major C^T = B^T A^T
        _gemm(b'n', b'n', no, nb, ni, &w[0, 0], no, &x[0, 0], ni, &out[0, 0], no)
        for i in range(nb):
            for j in range(no):
                v = out[i, j] + b[j]
                if relu and v < 0.0:
                    v = 0.0
                out[i, j] = v
    return out_arr


def backprop_layer(double[:, ::1] delta, double[:, ::1] a_in, double[:, ::1] w,
                   relu_act):
    """Reverse one affine(+ReLU) layer; returns (dw, db, delta_prev)."""
    cdef int nb = delta.shape[0]
    cdef int no = delta.shape[1]
    cdef int ni = a_in.shape[1]
    cdef double[:, ::1] act
    cdef double[:, ::1] d
    cdef int i, j

    masked_arr = None
    if relu_act is not None:
        act = relu_act
        masked_arr = np.empty((nb, no))
        d = masked_arr
        with nogil:
            for i in range(nb):
                for j in range(no):
                    d[i, j] = delta[i, j] if act[i, j] > 0.0 else 0.0
    else:
        d = delta

    dw_arr = np.empty((ni, no))
    db_arr = np.empty(no)
    dprev_arr = np.empty((nb, ni))
    cdef double[:, ::1] dw = dw_arr
    cdef double[::1] db = db_arr
    cdef double[:, ::1] dprev = dprev_arr
    with nogil:
        # dw = a_in^T @ d      (col-major: dw^T = d^T @ a_in)
        _gemm(b'n', b't', no, ni, nb, &d[0, 0], no, &a_in[0, 0], ni, &dw[0, 0], no)
        # delta_prev = d @ w^T (col-major: delta_prev^T = w @ d^T)
        _gemm(b't', b'n', ni, nb, no, &w[0, 0], no, &d[0, 0], no, &dprev[0, 0], ni)
        for j in range(no):
            db[j] = 0.0
        for i in range(nb):  # row-major accumulation
            for j in range(no):
                db[j] += d[i, j]
    return dw_arr, db_arr, dprev_arr


def adam_step(param, grad, m, v, t, double lr, double beta1, double beta2,
              double eps):
    """Bias-corrected Adam update, in place on param/m/v."""
    cdef double[::1] p1 = param.ravel()
    cdef double[::1] g1 = np.ascontiguousarray(grad).ravel()
    cdef double[::1] m1 = m.ravel()
    cdef double[::1] v1 = v.ravel()
    cdef Py_ssize_t n = p1.shape[0]
    cdef double c1 = 1.0 - beta1 ** t
    cdef double c2 = 1.0 - beta2 ** t
    cdef Py_ssize_t i
    cdef double g
    with nogil:
        for i in range(n):
            g = g1[i]
            m1[i] = beta1 * m1[i] + (1.0 - beta1) * g
            v1[i] = beta2 * v1[i] + (1.0 - beta2) * g * g
            p1[i] -= lr * (m1[i] / c1) / (sqrt(v1[i] / c2) + eps)
