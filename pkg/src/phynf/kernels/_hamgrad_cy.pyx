# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled fused kernels for the Hamiltonian energy-network gradient.

Same contract as ``_fallback``.  Matrix products go through BLAS dgemm on the
row-major buffers and the elementwise stages are fused into typed loops, so
no temporaries are allocated between the products.
"""
import numpy as np

from scipy.linalg.cython_blas cimport dgemm


cdef void _gemm(bint ta, bint tb, double[:, ::1] A, double[:, ::1] B,
                double[:, ::1] C, double beta) noexcept nogil:
    # Row-major C = op(A) @ op(B) + beta * C, evaluated as the column-major
    # product C^T = op(B)^T op(A)^T.
    cdef char transa = b'T' if tb else b'N'
    cdef char transb = b'T' if ta else b'N'
    cdef int m = <int>C.shape[1]
    cdef int n = <int>C.shape[0]
    cdef int k = <int>(A.shape[0] if ta else A.shape[1])
    cdef int ldb_ = <int>B.shape[1]
    cdef int lda_ = <int>A.shape[1]
    cdef int ldc = <int>C.shape[1]
    cdef double alpha = 1.0
    if m == 0 or n == 0:
        return
    dgemm(&transa, &transb, &m, &n, &k, &alpha, &B[0, 0], &ldb_, &A[0, 0], &lda_,
          &beta, &C[0, 0], &ldc)


def hamgrad_forward(x, W1, b1, W2, b2, w3):
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] W1v = np.ascontiguousarray(W1, dtype=np.float64)
    cdef double[::1] b1v = np.ascontiguousarray(b1, dtype=np.float64)
    cdef double[:, ::1] W2v = np.ascontiguousarray(W2, dtype=np.float64)
    cdef double[::1] b2v = np.ascontiguousarray(b2, dtype=np.float64)
    cdef double[:, ::1] w3v = np.ascontiguousarray(w3, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1], h1 = W1v.shape[1], h2 = W2v.shape[1]
    a1_arr = np.empty((n, h1))
    a2_arr = np.empty((n, h2))
    c1_arr = np.empty((n, h1))
    d2_arr = np.empty((n, h2))
    d1_arr = np.empty((n, h1))
    g_arr = np.empty((n, d))
    cdef double[:, ::1] a1 = a1_arr
    cdef double[:, ::1] a2 = a2_arr
    cdef double[:, ::1] c1 = c1_arr
    cdef double[:, ::1] d2 = d2_arr
    cdef double[:, ::1] d1 = d1_arr
    cdef double[:, ::1] G = g_arr
    cdef Py_ssize_t i, j
    cdef double t
    # tanh goes through numpy's vectorized ufunc in place; scalar libm tanh is
    # several times slower than the SIMD loop.
    with nogil:
        _gemm(False, False, xv, W1v, a1, 0.0)
        for i in range(n):
            for j in range(h1):
                a1[i, j] += b1v[j]
    np.tanh(a1_arr, out=a1_arr)
    with nogil:
        _gemm(False, False, a1, W2v, a2, 0.0)
        for i in range(n):
            for j in range(h2):
                a2[i, j] += b2v[j]
    np.tanh(a2_arr, out=a2_arr)
    with nogil:
        for i in range(n):
            for j in range(h2):
                t = a2[i, j]
                d2[i, j] = (1.0 - t * t) * w3v[j, 0]
        _gemm(False, True, d2, W2v, c1, 0.0)
        for i in range(n):
            for j in range(h1):
                t = a1[i, j]
                d1[i, j] = (1.0 - t * t) * c1[i, j]
        _gemm(False, True, d1, W1v, G, 0.0)
    return g_arr, a1_arr, a2_arr, c1_arr


def hamgrad_backward(V, x, W1, W2, w3, a1, a2, c1):
    cdef double[:, ::1] Vv = np.ascontiguousarray(V, dtype=np.float64)
    cdef double[:, ::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[:, ::1] W1v = np.ascontiguousarray(W1, dtype=np.float64)
    cdef double[:, ::1] W2v = np.ascontiguousarray(W2, dtype=np.float64)
    cdef double[:, ::1] w3v = np.ascontiguousarray(w3, dtype=np.float64)
    cdef double[:, ::1] a1v = np.ascontiguousarray(a1, dtype=np.float64)
    cdef double[:, ::1] a2v = np.ascontiguousarray(a2, dtype=np.float64)
    cdef double[:, ::1] c1v = np.ascontiguousarray(c1, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], d = xv.shape[1], h1 = W1v.shape[1], h2 = W2v.shape[1]

    d1_arr = np.empty((n, h1))
    d2_arr = np.empty((n, h2))
    D1_arr = np.empty((n, h1))
    C1_arr = np.empty((n, h1))
    A1_arr = np.empty((n, h1))
    D2_arr = np.empty((n, h2))
    Z2_arr = np.empty((n, h2))
    gW1_arr = np.empty((d, h1))
    gW2_arr = np.empty((h1, h2))
    gb1_arr = np.zeros(h1)
    gb2_arr = np.zeros(h2)
    gw3_arr = np.zeros((h2, 1))
    gx_arr = np.empty((n, d))

    cdef double[:, ::1] d1 = d1_arr
    cdef double[:, ::1] d2 = d2_arr
    cdef double[:, ::1] D1 = D1_arr
    cdef double[:, ::1] C1 = C1_arr
    cdef double[:, ::1] A1 = A1_arr
    cdef double[:, ::1] D2 = D2_arr
    cdef double[:, ::1] Z2 = Z2_arr
    cdef double[:, ::1] gW1 = gW1_arr
    cdef double[:, ::1] gW2 = gW2_arr
    cdef double[::1] gb1 = gb1_arr
    cdef double[::1] gb2 = gb2_arr
    cdef double[:, ::1] gw3 = gw3_arr
    cdef double[:, ::1] gx = gx_arr
    cdef Py_ssize_t i, j
    cdef double s, a, z

    with nogil:
        for i in range(n):
            for j in range(h1):
                a = a1v[i, j]
                d1[i, j] = (1.0 - a * a) * c1v[i, j]
            for j in range(h2):
                a = a2v[i, j]
                d2[i, j] = (1.0 - a * a) * w3v[j, 0]
        _gemm(False, False, Vv, W1v, D1, 0.0)
        _gemm(True, False, Vv, d1, gW1, 0.0)
        for i in range(n):
            for j in range(h1):
                a = a1v[i, j]
                C1[i, j] = D1[i, j] * (1.0 - a * a)
                A1[i, j] = -2.0 * a * c1v[i, j] * D1[i, j]
        _gemm(True, False, C1, d2, gW2, 0.0)
        _gemm(False, False, C1, W2v, D2, 0.0)
        for i in range(n):
            for j in range(h2):
                a = a2v[i, j]
                s = 1.0 - a * a
                gw3[j, 0] += D2[i, j] * s
                z = -2.0 * a * D2[i, j] * w3v[j, 0] * s
                Z2[i, j] = z
                gb2[j] += z
        _gemm(True, False, a1v, Z2, gW2, 1.0)
        _gemm(False, True, Z2, W2v, A1, 1.0)
        for i in range(n):
            for j in range(h1):
                a = a1v[i, j]
                z = A1[i, j] * (1.0 - a * a)
                A1[i, j] = z
                gb1[j] += z
        _gemm(True, False, xv, A1, gW1, 1.0)
        _gemm(False, True, A1, W1v, gx, 0.0)
    return gx_arr, gW1_arr, gb1_arr, gW2_arr, gb2_arr, gw3_arr
