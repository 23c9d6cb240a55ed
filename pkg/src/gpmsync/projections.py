"""Projections onto O(d)/SO(d), onto balanced clusterings, and onto the joint feasible set."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .blockmat import GroupKind, InvalidInputError, _as_stack
from .sgbm import JointState

_DEGENERATE_RTOL = 1e-12


@dataclass(frozen=True)
class AssignmentSolution:
    """Balanced labels maximising ``sum_i M[i, labels[i]]``.

    ``tie`` is set when another balanced labelling attains the same
    objective (up to rounding), i.e. the maximiser is not unique.
    """

    labels: np.ndarray
    objective: float
    tie: bool = False


@dataclass(frozen=True)
class ProjectionFlags:
    tie: bool
    nonunique: np.ndarray

    @property
    def degenerate(self) -> bool:
        return self.tie or bool(self.nonunique.any())


def nuclear_norm(X) -> float | np.ndarray:
    """Sum of singular values of a d x d matrix (or each matrix of a stack)."""
    Xs, single = _as_stack(X)
    _, s, _ = kernels.svd_batch(Xs)
    out = s.sum(axis=1)
    return float(out[0]) if single else out


def _procrustes_from_svd(U, s, V, special: bool):
    N, d, _ = U.shape
    if special:
        sgn = np.sign(kernels.det_batch(U) * kernels.det_batch(V))
        U = U.copy()
        U[sgn < 0, :, d - 1] *= -1.0
    Q = np.einsum("nij,nkj->nik", U, V)
    smax = s[:, 0]
    zero = smax <= 1e-300
    thresh = _DEGENERATE_RTOL * smax
    if special:
        if d == 1:
            flag = zero.copy()
        else:
            gap = np.where(sgn < 0, s[:, d - 2] - s[:, d - 1], s[:, d - 2])
            flag = zero | (gap <= thresh) | (s[:, d - 2] <= thresh)
    else:
        flag = zero | (s[:, d - 1] <= thresh)
    if zero.any():
        Q[zero] = np.eye(d)
    return Q, flag


def procrustes_batch(X, special: bool = False):
    """Nearest orthogonal (or rotation) matrix for each block of a stack.

    Returns ``(Q, nonunique)``; ``nonunique[k]`` marks blocks whose maximiser
    of ``<X_k, Q>`` is not unique. All-zero blocks map to the identity.
    """
    Xs, _ = _as_stack(X)
    if not np.all(np.isfinite(Xs)):
        raise InvalidInputError("procrustes: non-finite entries")
    U, s, V = kernels.svd_batch(Xs)
    return _procrustes_from_svd(U, s, V, special)


def project_orthogonal(X, kind: GroupKind | None = None, *, with_flag: bool = False):
    """``argmax_{Q in G} <X, Q>`` for ``G`` = O(d) (default) or SO(d).

    For O(d) this is ``U V^T`` from the SVD ``X = U S V^T``; for SO(d) the
    last column of ``U`` is negated when ``det(U V^T) = -1``.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise InvalidInputError("project_orthogonal expects a single square matrix")
    special = bool(kind is not None and kind.special)
    Q, flag = procrustes_batch(X[None], special)
    if with_flag:
        return Q[0], bool(flag[0])
    return Q[0]


def procrustes_gain(S, special: bool = False):
    """``max_{Q in G} <S, Q>`` for each block: nuclear norm, or its det-corrected form."""
    Ss, single = _as_stack(S)
    U, s, V = kernels.svd_batch(Ss)
    gain = s.sum(axis=1)
    if special:
        sgn = np.sign(kernels.det_batch(U) * kernels.det_batch(V))
        gain = gain - np.where(sgn < 0, 2.0 * s[:, -1], 0.0)
    return float(gain[0]) if single else gain


def mu(X) -> np.ndarray:
    """Blockwise nuclear norms of an ``(n, K, d, d)`` block matrix -> ``(n, K)``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4 or X.shape[2] != X.shape[3]:
        raise InvalidInputError(f"mu expects shape (n, K, d, d), got {X.shape}")
    n, K, d, _ = X.shape
    _, s, _ = kernels.svd_batch(X.reshape(n * K, d, d))
    return s.sum(axis=1).reshape(n, K)


def _move_costs(M, labels, K):
    """Cheapest single-node move between each ordered pair of clusters.

    ``T[a, b]`` is the smallest objective loss from moving one node of
    cluster ``a`` to ``b``; ``who[a, b]`` the node (lowest index on ties).
    """
    n = M.shape[0]
    base = M[np.arange(n), labels]
    D = base[:, None] - M
    T = np.full((K, K), np.inf)
    who = np.full((K, K), -1, dtype=np.int64)
    for a in range(K):
        idx = np.flatnonzero(labels == a)
        if len(idx) == 0:
            continue
        sub = D[idx]
        am = np.argmin(sub, axis=0)
        T[a] = sub[am, np.arange(K)]
        who[a] = idx[am]
        T[a, a] = np.inf
    return T, who


def balanced_assignment(M, m: int | None = None) -> AssignmentSolution:
    """Exact maximiser of ``sum_i M[i, l_i]`` subject to every cluster holding ``m`` nodes.

    Successive shortest paths on the cluster residual graph: start from the
    unconstrained per-row argmax (which has no negative residual cycles),
    then repeatedly move one unit of excess from an overfull cluster to an
    underfull one along a cheapest chain of single-node moves. Shortest
    paths use Bellman-Ford over the K clusters.
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2:
        raise InvalidInputError("score matrix must be 2-D")
    n, K = M.shape
    if not np.all(np.isfinite(M)):
        raise InvalidInputError("non-finite scores")
    if m is None:
        if K == 0 or n % K:
            raise InvalidInputError(f"K={K} does not divide n={n}")
        m = n // K
    if m * K != n:
        raise InvalidInputError("cluster capacities do not sum to n")

    eps = 1e-14 * (1.0 + float(np.abs(M).max(initial=0.0)))
    labels = np.argmax(M, axis=1).astype(np.int64)
    counts = np.bincount(labels, minlength=K)
    while np.any(counts > m):
        T, who = _move_costs(M, labels, K)
        dist = np.where(counts > m, 0.0, np.inf)
        pred = np.full(K, -1, dtype=np.int64)
        for _ in range(K):
            cand = dist[:, None] + T
            best = np.argmin(cand, axis=0)
            newd = cand[best, np.arange(K)]
            upd = newd < dist - eps
            if not upd.any():
                break
            dist[upd] = newd[upd]
            pred[upd] = best[upd]
        target = int(np.argmin(np.where(counts < m, dist, np.inf)))
        b = target
        moves = []
        for _ in range(K):
            a = int(pred[b])
            if a < 0:
                break
            moves.append((int(who[a, b]), b))
            b = a
        source = b
        for node, dst in moves:
            labels[node] = dst
        counts[source] -= 1
        counts[target] += 1

    objective = math.fsum(M[np.arange(n), labels])
    tie = False
    if K > 1:
        T, _ = _move_costs(M, labels, K)
        # min-cost closed walk over clusters; zero means an equal-objective swap cycle
        F = T.copy()
        for k in range(K):
            F = np.minimum(F, F[:, k:k + 1] + F[k:k + 1, :])
        tie = bool(np.min(np.diag(F)) <= 1e-12 * (1.0 + float(np.abs(M).max())))
    return AssignmentSolution(labels, objective, tie)


def project_clustering(M) -> AssignmentSolution:
    """Projection of a score matrix onto balanced clustering matrices."""
    return balanced_assignment(M)


def project_feasible(X, *, details: bool = False):
    """Project an ``(n, K, d, d)`` block matrix onto the joint feasible set (O(d) blocks).

    Scores are the blockwise nuclear norms; labels come from the balanced
    assignment; each node's block is the Procrustes projection of its
    selected block. This maximises ``<X, W>`` over the feasible set.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 4 or X.shape[2] != X.shape[3]:
        raise InvalidInputError(f"project_feasible expects shape (n, K, d, d), got {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("project_feasible: non-finite entries")
    n, K, d, _ = X.shape
    U, s, V = kernels.svd_batch(X.reshape(n * K, d, d))
    scores = s.sum(axis=1).reshape(n, K)
    sol = balanced_assignment(scores)
    pick = np.arange(n) * K + sol.labels
    R, flag = _procrustes_from_svd(U[pick], s[pick], V[pick], special=False)
    state = JointState(sol.labels, R, K)
    if details:
        return state, ProjectionFlags(sol.tie, flag)
    return state
