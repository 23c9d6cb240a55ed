# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot kernels; see ``_pykernels`` for semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, hypot

cnp.import_array()

cdef double JACOBI_EPS = 1e-15
cdef int MAX_SWEEPS = 60


cdef void _svd_one(double[:, :] W, double[:, :] V, double[:] sig,
                   double[:, :] U, long[:] order, double[:] work) noexcept nogil:
    cdef Py_ssize_t d = W.shape[0]
    cdef Py_ssize_t i, j, k, p, q, sweep, best
    cdef double a, b, g, zeta, t, c, s, x, y, smax, nv, bestn
    cdef bint rotated

    for i in range(d):
        for j in range(d):
            V[i, j] = 1.0 if i == j else 0.0

    for sweep in range(MAX_SWEEPS):
        rotated = False
        for p in range(d - 1):
            for q in range(p + 1, d):
                a = 0.0
                b = 0.0
                g = 0.0
                for i in range(d):
                    a += W[i, p] * W[i, p]
                    b += W[i, q] * W[i, q]
                    g += W[i, p] * W[i, q]
                if not (fabs(g) > JACOBI_EPS * sqrt(a * b)):
                    continue
                rotated = True
                zeta = (b - a) / (2.0 * g)
                if zeta >= 0.0:
                    t = 1.0 / (zeta + hypot(1.0, zeta))
                else:
                    t = -1.0 / (-zeta + hypot(1.0, zeta))
                c = 1.0 / sqrt(1.0 + t * t)
                s = c * t
                for i in range(d):
                    x = W[i, p]
                    y = W[i, q]
                    W[i, p] = c * x - s * y
                    W[i, q] = s * x + c * y
                    x = V[i, p]
                    y = V[i, q]
                    V[i, p] = c * x - s * y
                    V[i, q] = s * x + c * y
        if not rotated:
            break

    for j in range(d):
        a = 0.0
        for i in range(d):
            a += W[i, j] * W[i, j]
        sig[j] = sqrt(a)
        order[j] = j
    # insertion sort, descending, stable
    for j in range(1, d):
        k = order[j]
        i = j - 1
        while i >= 0 and sig[order[i]] < sig[k]:
            order[i + 1] = order[i]
            i -= 1
        order[i + 1] = k

    smax = sig[order[0]] if d > 0 else 0.0
    for j in range(d):
        k = order[j]
        s = sig[k]
        for i in range(d):
            if s <= 1e-300 + 1e-15 * smax:
                U[i, j] = 0.0
            else:
                U[i, j] = W[i, k] / s
    # permute V columns and sigma into sorted order (W reused as scratch)
    for j in range(d):
        k = order[j]
        work[j] = sig[k]
        for i in range(d):
            W[i, j] = V[i, k]
    for j in range(d):
        sig[j] = work[j]
        for i in range(d):
            V[i, j] = W[i, j]

    # Gram-Schmidt re-orthonormalisation with null-column completion
    for k in range(d):
        for j in range(k):
            x = 0.0
            for i in range(d):
                x += U[i, j] * U[i, k]
            for i in range(d):
                U[i, k] -= x * U[i, j]
        nv = 0.0
        for i in range(d):
            nv += U[i, k] * U[i, k]
        nv = sqrt(nv)
        if nv < 0.5:
            bestn = -1.0
            best = 0
            for p in range(d):
                for i in range(d):
                    work[i] = 1.0 if i == p else 0.0
                for j in range(k):
                    x = U[p, j]
                    for i in range(d):
                        work[i] -= x * U[i, j]
                y = 0.0
                for i in range(d):
                    y += work[i] * work[i]
                if y > bestn:
                    bestn = y
                    best = p
            for i in range(d):
                U[i, k] = 1.0 if i == best else 0.0
            for j in range(k):
                x = U[best, j]
                for i in range(d):
                    U[i, k] -= x * U[i, j]
            nv = sqrt(bestn)
        for i in range(d):
            U[i, k] /= nv


def svd_batch(X):
    cdef double[:, :, :] W = np.array(X, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t N = W.shape[0]
    cdef Py_ssize_t d = W.shape[1]
    U_arr = np.empty((N, d, d))
    V_arr = np.empty((N, d, d))
    s_arr = np.empty((N, d))
    cdef double[:, :, :] U = U_arr
    cdef double[:, :, :] V = V_arr
    cdef double[:, :] S = s_arr
    cdef long[:] order = np.empty(d, dtype=np.int_)
    cdef double[:] work = np.empty(d)
    cdef Py_ssize_t n
    with nogil:
        for n in range(N):
            _svd_one(W[n], V[n], S[n], U[n], order, work)
    return U_arr, s_arr, V_arr


def det_batch(X):
    cdef double[:, :, :] A = np.array(X, dtype=np.float64, copy=True, order="C")
    cdef Py_ssize_t N = A.shape[0]
    cdef Py_ssize_t d = A.shape[1]
    out = np.empty(N)
    cdef double[:] det = out
    cdef Py_ssize_t n, i, j, k, piv
    cdef double best, tmp, f, dv
    with nogil:
        for n in range(N):
            dv = 1.0
            for k in range(d):
                piv = k
                best = fabs(A[n, k, k])
                for i in range(k + 1, d):
                    if fabs(A[n, i, k]) > best:
                        best = fabs(A[n, i, k])
                        piv = i
                if piv != k:
                    for j in range(d):
                        tmp = A[n, k, j]
                        A[n, k, j] = A[n, piv, j]
                        A[n, piv, j] = tmp
                    dv = -dv
                dv *= A[n, k, k]
                if A[n, k, k] == 0.0:
                    continue
                for i in range(k + 1, d):
                    f = A[n, i, k] / A[n, k, k]
                    for j in range(k, d):
                        A[n, i, j] -= f * A[n, k, j]
            det[n] = dv
    return out


def block_apply_csr(indptr, indices, blocks, Y):
    cdef long[::1] ptr = np.ascontiguousarray(indptr, dtype=np.int_)
    cdef long[::1] idx = np.ascontiguousarray(indices, dtype=np.int_)
    cdef double[:, :, ::1] B = np.ascontiguousarray(blocks, dtype=np.float64).reshape(
        len(indices), np.shape(Y)[1], np.shape(Y)[1])
    out_arr = np.array(Y, dtype=np.float64, copy=True, order="C")
    cdef double[:, :, ::1] Yv = np.ascontiguousarray(Y, dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t n = Yv.shape[0]
    cdef Py_ssize_t d = Yv.shape[1]
    cdef Py_ssize_t c = Yv.shape[2]
    cdef Py_ssize_t i, e, j, a, b, col
    cdef double w
    with nogil:
        for i in range(n):
            for e in range(ptr[i], ptr[i + 1]):
                j = idx[e]
                for a in range(d):
                    for b in range(d):
                        w = B[e, a, b]
                        for col in range(c):
                            out[i, a, col] += w * Yv[j, b, col]
    return out_arr
