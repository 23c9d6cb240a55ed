"""Vectorised numpy versions of the hot kernels.

These mirror ``_ckernels.pyx`` function for function and are used when the
compiled extension is unavailable (or ``GPMSYNC_PURE=1`` is set).
"""

import numpy as np

_JACOBI_EPS = 1e-15
_MAX_SWEEPS = 60


def svd_batch(X):
    """One-sided (Hestenes) Jacobi SVD of a stack of square matrices.

    Returns ``U, s, V`` with ``X[k] = U[k] @ diag(s[k]) @ V[k].T``, singular
    values sorted in nonincreasing order and ``U``, ``V`` orthogonal.
    """
    X = np.asarray(X, dtype=np.float64)
    N, d, _ = X.shape
    W = X.copy()
    V = np.broadcast_to(np.eye(d), (N, d, d)).copy()
    for _ in range(_MAX_SWEEPS):
        rotated = False
        for p in range(d - 1):
            for q in range(p + 1, d):
                wp = W[:, :, p]
                wq = W[:, :, q]
                a = np.einsum("ij,ij->i", wp, wp)
                b = np.einsum("ij,ij->i", wq, wq)
                g = np.einsum("ij,ij->i", wp, wq)
                active = np.abs(g) > _JACOBI_EPS * np.sqrt(a * b)
                if not active.any():
                    continue
                rotated = True
                gs = np.where(active, g, 1.0)
                # a subnormal g overflows zeta to inf, giving the correct limit t = 0
                with np.errstate(over="ignore"):
                    zeta = (b - a) / (2.0 * gs)
                    sgn = np.where(zeta >= 0.0, 1.0, -1.0)
                    t = sgn / (np.abs(zeta) + np.hypot(1.0, zeta))
                c = 1.0 / np.sqrt(1.0 + t * t)
                s = c * t
                c = np.where(active, c, 1.0)[:, None]
                s = np.where(active, s, 0.0)[:, None]
                wp, wq = wp.copy(), wq.copy()
                W[:, :, p] = c * wp - s * wq
                W[:, :, q] = s * wp + c * wq
                vp = V[:, :, p].copy()
                vq = V[:, :, q].copy()
                V[:, :, p] = c * vp - s * vq
                V[:, :, q] = s * vp + c * vq
        if not rotated:
            break

    sigma = np.sqrt(np.einsum("nij,nij->nj", W, W))
    order = np.argsort(-sigma, axis=1, kind="stable")
    sigma = np.take_along_axis(sigma, order, axis=1)
    W = np.take_along_axis(W, order[:, None, :], axis=2)
    V = np.take_along_axis(V, order[:, None, :], axis=2)

    smax = sigma[:, :1]
    tiny = sigma <= 1e-300 + 1e-15 * smax
    safe = np.where(tiny, 1.0, sigma)
    U = W / safe[:, None, :]
    U[np.broadcast_to(tiny[:, None, :], U.shape)] = 0.0
    U = _gram_schmidt_complete(U)
    return U, sigma, V


def _gram_schmidt_complete(U):
    """Re-orthonormalise columns left to right, filling null columns."""
    N, d, _ = U.shape
    eye = np.eye(d)
    out = np.zeros_like(U)
    for k in range(d):
        v = U[:, :, k].copy()
        for j in range(k):
            v -= np.einsum("ni,ni->n", out[:, :, j], v)[:, None] * out[:, :, j]
        nv = np.linalg.norm(v, axis=1)
        bad = nv < 0.5
        if bad.any():
            # candidate basis vectors, orthogonalised against accepted columns
            cand = np.broadcast_to(eye, (int(bad.sum()), d, d)).copy()
            for j in range(k):
                uj = out[bad, :, j]
                cand -= uj[:, :, None] * np.einsum("ni,nie->ne", uj, cand)[:, None, :]
            cn = np.linalg.norm(cand, axis=1)
            pick = np.argmax(cn, axis=1)
            rows = np.arange(cand.shape[0])
            v[bad] = cand[rows, :, pick]
            nv[bad] = cn[rows, pick]
        out[:, :, k] = v / nv[:, None]
    return out


def det_batch(X):
    """Determinants of a stack of square matrices via LU with partial pivoting."""
    A = np.array(X, dtype=np.float64, copy=True)
    N, d, _ = A.shape
    det = np.ones(N)
    rows = np.arange(N)
    for k in range(d):
        piv = k + np.argmax(np.abs(A[:, k:, k]), axis=1)
        swap = piv != k
        if swap.any():
            r = rows[swap]
            tmp = A[r, k, :].copy()
            A[r, k, :] = A[r, piv[swap], :]
            A[r, piv[swap], :] = tmp
            det[swap] = -det[swap]
        pivot = A[:, k, k]
        det *= pivot
        nz = pivot != 0.0
        if k + 1 < d and nz.any():
            f = np.zeros((N, d - k - 1))
            f[nz] = A[nz, k + 1:, k] / pivot[nz, None]
            A[:, k + 1:, k:] -= f[:, :, None] * A[:, None, k, k:]
    return det


def block_apply_csr(indptr, indices, blocks, Y):
    """``out[i] = Y[i] + sum_{e in row i} blocks[e] @ Y[indices[e]]``."""
    Y = np.asarray(Y, dtype=np.float64)
    out = Y.copy()
    if len(indices) == 0:
        return out
    contrib = np.einsum("eab,ebc->eac", blocks, Y[indices], optimize=True)
    deg = np.diff(indptr)
    nonempty = np.flatnonzero(deg)
    out[nonempty] += np.add.reduceat(contrib, indptr[nonempty], axis=0)
    return out
