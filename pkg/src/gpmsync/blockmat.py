"""Small-matrix kernels, Haar sampling and the sparse block observation matrix."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from . import kernels

ORTHO_TOL = 1e-10


class InvalidInputError(ValueError):
    """Raised when an argument violates an operation's preconditions."""


@dataclass(frozen=True)
class GroupKind:
    """The symmetry group O(d) or SO(d)."""

    d: int
    special: bool = False

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise InvalidInputError(f"group dimension must be a positive integer, got {self.d}")

    @classmethod
    def orthogonal(cls, d: int) -> "GroupKind":
        return cls(d, False)

    @classmethod
    def special_orthogonal(cls, d: int) -> "GroupKind":
        return cls(d, True)

    @classmethod
    def parse(cls, name: str, d: int) -> "GroupKind":
        key = name.strip().lower()
        if key in ("o", "od", "o(d)", "orthogonal"):
            return cls(d, False)
        if key in ("so", "sod", "so(d)", "special_orthogonal", "rotation"):
            return cls(d, True)
        raise InvalidInputError(f"unknown group {name!r}; expected 'o' or 'so'")

    @property
    def code(self) -> str:
        return "so" if self.special else "o"

    def __str__(self):
        return f"{'SO' if self.special else 'O'}({self.d})"


def _as_stack(X):
    X = np.asarray(X, dtype=np.float64)
    single = X.ndim == 2
    if single:
        X = X[None]
    if X.ndim != 3 or X.shape[1] != X.shape[2]:
        raise InvalidInputError(f"expected square matrix or stack of them, got shape {X.shape}")
    return X, single


def svd_small(X):
    """Jacobi SVD of a d-by-d matrix (or a stack of them).

    Returns ``(U, sigma, V)`` with ``X = U @ diag(sigma) @ V.T``, ``sigma``
    nonincreasing and nonnegative, ``U`` and ``V`` orthogonal.
    """
    Xs, single = _as_stack(X)
    if not np.all(np.isfinite(Xs)):
        raise InvalidInputError("svd_small: non-finite entries")
    U, s, V = kernels.svd_batch(Xs)
    if single:
        return U[0], s[0], V[0]
    return U, s, V


def det_small(X):
    """Determinant by LU with partial pivoting; accepts a matrix or a stack."""
    Xs, single = _as_stack(X)
    out = kernels.det_batch(Xs)
    return float(out[0]) if single else out


def qr_small(X):
    """Modified Gram-Schmidt QR of a stack of square matrices.

    The returned ``R`` has a nonnegative diagonal.
    """
    Xs, single = _as_stack(X)
    N, d, _ = Xs.shape
    Q = np.zeros_like(Xs)
    R = np.zeros_like(Xs)
    for k in range(d):
        v = Xs[:, :, k].copy()
        for j in range(k):
            r = np.einsum("ni,ni->n", Q[:, :, j], v)
            R[:, j, k] = r
            v -= r[:, None] * Q[:, :, j]
        nv = np.linalg.norm(v, axis=1)
        R[:, k, k] = nv
        Q[:, :, k] = v / np.where(nv > 0, nv, 1.0)[:, None]
    if single:
        return Q[0], R[0]
    return Q, R


def haar_sample(kind: GroupKind, rng: np.random.Generator, size: int | None = None):
    """Draw Haar-distributed elements of O(d) or SO(d).

    Uses QR of a standard Gaussian matrix with the diagonal of ``R`` forced
    positive; for SO(d) the first column is negated when the determinant is -1.
    """
    d = kind.d
    count = 1 if size is None else int(size)
    G = rng.standard_normal((count, d, d))
    Q, R = qr_small(G)
    sgn = np.sign(np.einsum("nii->ni", R))
    sgn[sgn == 0] = 1.0
    Q = Q * sgn[:, None, :]
    if kind.special:
        flip = kernels.det_batch(Q) < 0
        Q[flip, :, 0] *= -1.0
    return Q[0] if size is None else Q


def orthogonality_defect(Q) -> np.ndarray:
    """``||Q^T Q - I||_F`` for a matrix or each matrix of a stack."""
    Qs, single = _as_stack(Q)
    d = Qs.shape[1]
    dev = np.linalg.norm(np.einsum("nji,njk->nik", Qs, Qs) - np.eye(d), axis=(1, 2))
    return float(dev[0]) if single else dev


def as_ortho_block(Q, kind: GroupKind | None = None):
    """Validate and re-orthonormalise a (stack of) orthogonal matrices.

    Inputs further than 1e-6 from orthogonal are rejected; the rest are
    snapped to their polar factor so the 1e-10 invariant holds exactly.
    """
    Qs, single = _as_stack(Q)
    if kind is not None and Qs.shape[1] != kind.d:
        raise InvalidInputError(f"block dimension {Qs.shape[1]} does not match {kind}")
    if np.any(orthogonality_defect(Qs) > 1e-6):
        raise InvalidInputError("block is not orthogonal")
    U, _, V = kernels.svd_batch(Qs)
    Qs = np.einsum("nij,nkj->nik", U, V)
    if kind is not None and kind.special and np.any(kernels.det_batch(Qs) < 0):
        raise InvalidInputError(f"block has determinant -1, not in {kind}")
    return Qs[0] if single else Qs


class ObservationMatrix:
    """Symmetric ``nd x nd`` block matrix with implicit identity diagonal.

    Only blocks ``A_ij`` with ``i < j`` are stored; ``A_ji`` is the transpose.
    Absent pairs are zero blocks. Instances are immutable.

    Parameters
    ----------
    n, d : int
        Node count and block dimension.
    rows, cols : array of int, shape (E,)
        Edge endpoints with ``rows < cols``.
    blocks : array, shape (E, d, d)
        The orthogonal block stored for each edge.
    """

    def __init__(self, n: int, d: int, rows, cols, blocks, *, validate: bool = True):
        rows = np.asarray(rows, dtype=np.int64).reshape(-1)
        cols = np.asarray(cols, dtype=np.int64).reshape(-1)
        blocks = np.asarray(blocks, dtype=np.float64).reshape(len(rows), d, d)
        if len(cols) != len(rows):
            raise InvalidInputError("rows and cols differ in length")
        if validate and len(rows):
            if rows.min() < 0 or cols.max() >= n:
                raise InvalidInputError("edge endpoint out of range")
            if np.any(rows >= cols):
                raise InvalidInputError("edges must be stored with i < j")
            key = rows * n + cols
            if len(np.unique(key)) != len(key):
                raise InvalidInputError("duplicate edge")
            if np.any(orthogonality_defect(blocks) > ORTHO_TOL):
                raise InvalidInputError("edge block is not orthogonal")
        order = np.lexsort((cols, rows))
        self.n = int(n)
        self.d = int(d)
        self.rows = rows[order]
        self.cols = cols[order]
        self.blocks = blocks[order]
        for arr in (self.rows, self.cols, self.blocks):
            arr.setflags(write=False)
        self._index = None

    @property
    def num_edges(self) -> int:
        return len(self.rows)

    def block(self, i: int, j: int) -> np.ndarray:
        """Block ``A_ij`` (identity on the diagonal, zero when absent)."""
        if i == j:
            return np.eye(self.d)
        if self._index is None:
            self._index = {(int(a), int(b)): k for k, (a, b) in enumerate(zip(self.rows, self.cols))}
        if i < j:
            k = self._index.get((i, j))
            return np.zeros((self.d, self.d)) if k is None else self.blocks[k].copy()
        k = self._index.get((j, i))
        return np.zeros((self.d, self.d)) if k is None else self.blocks[k].T.copy()

    @cached_property
    def csr(self):
        """Row-sorted directed edge list ``(indptr, indices, blocks)`` with both orientations."""
        r = np.concatenate([self.rows, self.cols])
        c = np.concatenate([self.cols, self.rows])
        b = np.concatenate([self.blocks, np.transpose(self.blocks, (0, 2, 1))])
        order = np.lexsort((c, r))
        indptr = np.zeros(self.n + 1, dtype=np.int64)
        np.cumsum(np.bincount(r, minlength=self.n), out=indptr[1:])
        return indptr, np.ascontiguousarray(c[order]), np.ascontiguousarray(b[order])

    @cached_property
    def degrees(self) -> np.ndarray:
        return np.diff(self.csr[0])

    def matvec(self, Y) -> np.ndarray:
        """Product with a block column stack ``Y`` of shape ``(n, d, c)``."""
        Y = np.asarray(Y, dtype=np.float64)
        if Y.ndim != 3 or Y.shape[0] != self.n or Y.shape[1] != self.d:
            raise InvalidInputError(f"matvec: expected shape ({self.n}, {self.d}, c), got {Y.shape}")
        indptr, indices, blocks = self.csr
        return kernels.block_apply_csr(indptr, indices, blocks, Y)

    def matmul(self, X) -> np.ndarray:
        """Product with a flat ``(nd, c)`` matrix."""
        X = np.asarray(X, dtype=np.float64)
        flat = X.ndim == 1
        X2 = X.reshape(self.n * self.d, -1)
        out = self.matvec(X2.reshape(self.n, self.d, -1)).reshape(self.n * self.d, -1)
        return out.reshape(-1) if flat else out

    def dense(self) -> np.ndarray:
        """Materialise the full ``nd x nd`` matrix (tests and small n only)."""
        n, d = self.n, self.d
        A = np.zeros((n, d, n, d))
        idx = np.arange(n)
        A[idx, :, idx, :] = np.eye(d)
        A[self.rows, :, self.cols, :] = self.blocks
        A[self.cols, :, self.rows, :] = np.transpose(self.blocks, (0, 2, 1))
        return A.reshape(n * d, n * d)

    def connectivity(self) -> "ObservationMatrix":
        """Scalar ``n x n`` adjacency with unit diagonal, as a d = 1 matrix."""
        return ObservationMatrix(self.n, 1, self.rows, self.cols,
                                 np.ones((self.num_edges, 1, 1)), validate=False)

    def gershgorin_bound(self) -> float:
        """Upper bound on the spectral norm: every block has norm one."""
        return 1.0 + float(self.degrees.max(initial=0))

    def __repr__(self):
        return f"ObservationMatrix(n={self.n}, d={self.d}, edges={self.num_edges})"


def block_apply(A: ObservationMatrix, V) -> np.ndarray:
    """Sparse-dense product ``A V`` for an ``n x K`` block matrix.

    ``V`` has shape ``(n, K, d, d)``; block ``(i, k)`` of the result is
    ``sum_j A_ij V_jk`` including the identity diagonal term.
    """
    V = np.asarray(V, dtype=np.float64)
    if V.ndim != 4 or V.shape[0] != A.n or V.shape[2] != A.d or V.shape[3] != A.d:
        raise InvalidInputError(f"block_apply: expected V of shape ({A.n}, K, {A.d}, {A.d}), got {V.shape}")
    n, K, d, _ = V.shape
    Y = np.ascontiguousarray(np.transpose(V, (0, 2, 1, 3))).reshape(n, d, K * d)
    out = A.matvec(Y).reshape(n, d, K, d)
    return np.ascontiguousarray(np.transpose(out, (0, 2, 1, 3)))


def blocks_to_flat(V) -> np.ndarray:
    """``(n, K, d, d)`` block array to the flat ``(nd, Kd)`` matrix."""
    n, K, d, _ = V.shape
    return np.transpose(V, (0, 2, 1, 3)).reshape(n * d, K * d)


def flat_to_blocks(X, d: int) -> np.ndarray:
    """Inverse of :func:`blocks_to_flat`."""
    nd, Kd = X.shape
    return np.transpose(X.reshape(nd // d, d, Kd // d, d), (0, 2, 1, 3))
