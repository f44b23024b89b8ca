# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels; same contract as ``_pykernels``."""

import numpy as np
cimport numpy as cnp

cnp.import_array()


def conv_pool(const double[:, ::1] X, const double[:, :, ::1] W, const double[::1] b):
    cdef Py_ssize_t N = X.shape[0], D = X.shape[1]
    cdef Py_ssize_t K = W.shape[0], H = W.shape[1]
    if W.shape[2] != D:
        raise ValueError("kernel width must equal embedding dimension")
    if H > N:
        raise ValueError(f"kernel height {H} exceeds sequence length {N}")
    cdef Py_ssize_t P = N - H + 1, HD = H * D
    pre_arr = np.empty((P, K), dtype=np.float64)
    pooled_arr = np.empty(K, dtype=np.float64)
    argmax_arr = np.empty(K, dtype=np.intp)
    cdef double[:, ::1] pre = pre_arr
    cdef double[::1] pooled = pooled_arr
    cdef Py_ssize_t[::1] amax = argmax_arr
    cdef const double* xp = &X[0, 0]
    cdef const double* wp = &W[0, 0, 0]
    cdef const double* win
    cdef const double* ker
    cdef Py_ssize_t p, k, m, best_p, HD4 = HD - HD % 4
    cdef double s, s0, s1, s2, s3, v, best
    with nogil:
        for k in range(K):
            ker = wp + k * HD
            best = -1.0
            best_p = 0
            for p in range(P):
                win = xp + p * D
                # four independent partial sums keep the FP pipeline busy
                s0 = s1 = s2 = s3 = 0.0
                for m in range(0, HD4, 4):
                    s0 += ker[m] * win[m]
                    s1 += ker[m + 1] * win[m + 1]
                    s2 += ker[m + 2] * win[m + 2]
                    s3 += ker[m + 3] * win[m + 3]
                for m in range(HD4, HD):
                    s0 += ker[m] * win[m]
                s = (s0 + s1) + (s2 + s3) + b[k]
                pre[p, k] = s
                v = s if s > 0.0 else 0.0
                if v > best:
                    best = v
                    best_p = p
            pooled[k] = best
            amax[k] = best_p
    return pre_arr, pooled_arr, argmax_arr


def conv_backward(const double[:, ::1] X, const double[:, :, ::1] W,
                  const Py_ssize_t[::1] argmax, const double[::1] grad_pre,
                  double[:, :, ::1] dW, double[::1] db, double[:, ::1] dX):
    cdef Py_ssize_t D = X.shape[1]
    cdef Py_ssize_t K = W.shape[0], H = W.shape[1]
    cdef Py_ssize_t k, i, j, a
    cdef double g
    with nogil:
        for k in range(K):
            g = grad_pre[k]
            if g == 0.0:
                continue
            a = argmax[k]
            db[k] += g
            for i in range(H):
                for j in range(D):
                    dW[k, i, j] += g * X[a + i, j]
                    dX[a + i, j] += g * W[k, i, j]
