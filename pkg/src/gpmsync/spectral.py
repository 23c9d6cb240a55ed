"""Randomized spectral initialisation: orthogonal iteration, greedy clustering, pivot rotations."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .blockmat import InvalidInputError, ObservationMatrix
from .projections import balanced_assignment, procrustes_batch
from .sgbm import JointState


class EigenConvergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class EigBasis:
    """Orthonormal basis of an approximate invariant subspace.

    ``residual`` is ``||A U - U (U^T A U)||_F`` at termination.
    """

    vectors: np.ndarray
    values: np.ndarray
    residual: float
    converged: bool
    sweeps: int
    residual_history: tuple = ()


@dataclass(frozen=True)
class InitConfig:
    eig_tol: float = 1e-8
    eig_max_sweeps: int = 500
    pivot_seed: int = 0
    greedy_radius_quantile: float = 0.2
    eig_seed: int = 0
    features: str = "scalar"

    def __post_init__(self):
        if not self.eig_tol > 0:
            raise InvalidInputError("eig_tol must be positive")
        if not 0.0 < self.greedy_radius_quantile < 1.0:
            raise InvalidInputError("greedy_radius_quantile must lie in (0, 1)")
        if self.features not in ("scalar", "block"):
            raise InvalidInputError("features must be 'scalar' or 'block'")


def _qr(Y):
    Q, _ = np.linalg.qr(Y)
    return Q


def orthogonal_iteration(apply, N: int, r: int, *, tol: float, max_sweeps: int, shift: float,
                         rng: np.random.Generator, block: int | None = None,
                         value_rtol: float = 0.0, by_magnitude: bool = False) -> EigBasis:
    """Orthogonal iteration with Rayleigh-Ritz on ``apply + shift I``.

    Iterates a block of ``block >= r`` columns and returns the leading ``r``
    Ritz pairs of ``apply`` (algebraically largest first, or largest in
    magnitude when ``by_magnitude``). Stops when the top-``r`` residual is
    at most ``tol`` or, if ``value_rtol > 0``, when the leading Ritz values
    change by less than ``value_rtol`` relatively.
    """
    b = min(N, max(r, block or r))
    Q = _qr(rng.standard_normal((N, b)))
    history = []
    prev = None
    converged = False
    sweeps = 0
    w = np.zeros(b)
    for sweeps in range(1, max_sweeps + 1):
        AQ = apply(Q)
        H = Q.T @ AQ
        H = 0.5 * (H + H.T)
        w, S = np.linalg.eigh(H)
        order = np.argsort(-np.abs(w) if by_magnitude else -w, kind="stable")
        w, S = w[order], S[:, order]
        Q = Q @ S
        AQ = AQ @ S
        res = float(np.linalg.norm(AQ[:, :r] - Q[:, :r] * w[:r]))
        history.append(res)
        if res <= tol:
            converged = True
            break
        if value_rtol > 0 and prev is not None:
            scale = np.maximum(np.abs(w[:r]), 1e-300)
            if np.all(np.abs(w[:r] - prev) <= value_rtol * scale):
                converged = True
                break
        prev = w[:r].copy()
        Q = _qr(AQ + shift * Q)
    return EigBasis(Q[:, :r], w[:r], history[-1] if history else 0.0, converged, sweeps,
                    tuple(history))


def norm_estimate(A: ObservationMatrix, rng: np.random.Generator, iters: int = 30) -> float:
    """Power-method estimate of ``||A||`` (a lower bound that tightens with ``iters``)."""
    N = A.n * A.d
    x = rng.standard_normal(N)
    x /= np.linalg.norm(x)
    est = 0.0
    for _ in range(iters):
        y = A.matmul(x)
        ny = float(np.linalg.norm(y))
        if ny == 0.0:
            return 0.0
        est = max(est, ny)
        x = y / ny
    return est


def top_eigs(A: ObservationMatrix, r: int, cfg: InitConfig = InitConfig()) -> EigBasis:
    """Leading ``r`` eigenvectors of ``A`` (algebraically largest), by shifted orthogonal iteration.

    The shift ``1 + ||A||`` (power-method estimate) makes the algebraically
    largest eigenvalues the dominant ones. Emits
    :class:`EigenConvergenceWarning` when ``eig_max_sweeps`` is exhausted.
    """
    N = A.n * A.d
    if not 1 <= r <= N:
        raise InvalidInputError(f"r={r} outside [1, {N}]")
    rng = np.random.default_rng(cfg.eig_seed)
    shift = 1.0 + norm_estimate(A, rng)
    basis = orthogonal_iteration(A.matmul, N, r, tol=cfg.eig_tol, max_sweeps=cfg.eig_max_sweeps,
                                 shift=shift, rng=rng, block=min(N, 2 * r))
    if not basis.converged:
        warnings.warn(f"orthogonal iteration stopped at residual {basis.residual:.3e} after "
                      f"{basis.sweeps} sweeps", EigenConvergenceWarning, stacklevel=2)
    return basis


def _pairwise(Y):
    sq = np.einsum("ij,ij->i", Y, Y)
    D2 = sq[:, None] + sq[None, :] - 2.0 * (Y @ Y.T)
    np.maximum(D2, 0.0, out=D2)
    return np.sqrt(D2)


def greedy_cover(Y, K: int, quantile: float) -> np.ndarray:
    """Greedy ball covering of the rows of ``Y`` into ``K`` groups.

    Each round takes the unassigned point whose radius-``r`` ball holds the
    most unassigned points and turns that ball into a cluster; ``r`` is the
    given quantile of all pairwise distances. Leftovers join the nearest
    cluster centre.
    """
    n = Y.shape[0]
    labels = np.full(n, -1, dtype=np.int64)
    if K == 1 or n == 0:
        return np.zeros(n, dtype=np.int64)
    D = _pairwise(Y)
    iu = np.triu_indices(n, 1)
    radius = float(np.quantile(D[iu], quantile)) if n > 1 else 0.0
    within = D <= radius
    free = np.ones(n, dtype=bool)
    centers = []
    for k in range(K):
        if not free.any():
            break
        counts = within[:, free].sum(axis=1)
        counts[~free] = -1
        v = int(np.argmax(counts))
        ball = free & within[v]
        labels[ball] = k
        centers.append(Y[ball].mean(axis=0))
        free &= ~ball
    if free.any():
        C = np.asarray(centers)
        dist = np.linalg.norm(Y[free, None, :] - C[None, :, :], axis=2)
        labels[free] = np.argmin(dist, axis=1)
    return labels


def _block_features(U: np.ndarray, n: int, d: int) -> np.ndarray:
    """Per-node projector ``U_v^T U_v`` flattened; invariant to left rotations of ``U_v``."""
    Ub = U.reshape(n, d, -1)
    P = np.einsum("nai,naj->nij", Ub, Ub)
    return P.reshape(n, -1)


def greedy_cluster(A: ObservationMatrix, K: int, cfg: InitConfig = InitConfig(),
                   basis: EigBasis | None = None) -> np.ndarray:
    """Possibly imbalanced labels from greedy spectral clustering.

    With ``cfg.features == "scalar"`` the embedding is the top-K eigenvectors
    of the 0/1 connectivity matrix; with ``"block"`` it is the per-node
    projector built from the top-Kd eigenvectors of ``A`` itself.
    """
    if K < 1:
        raise InvalidInputError("K must be positive")
    if K == 1:
        return np.zeros(A.n, dtype=np.int64)
    if cfg.features == "scalar":
        Y = top_eigs(A.connectivity(), K, cfg).vectors
    else:
        if basis is None:
            basis = top_eigs(A, K * A.d, cfg)
        Y = _block_features(basis.vectors, A.n, A.d)
    return greedy_cover(Y, K, cfg.greedy_radius_quantile)


def initialize(A: ObservationMatrix, K: int, d: int, cfg: InitConfig = InitConfig(),
               *, return_basis: bool = False):
    """Spectral initial point: greedy clusters, balanced, with pivot-relative rotations."""
    if d != A.d:
        raise InvalidInputError(f"d={d} does not match the observation block size {A.d}")
    n = A.n
    if n % K:
        raise InvalidInputError(f"K={K} does not divide n={n}")
    basis = top_eigs(A, K * d, cfg)
    raw = greedy_cluster(A, K, cfg, basis=basis)
    H0 = np.zeros((n, K))
    H0[np.arange(n), raw] = 1.0
    labels = balanced_assignment(H0).labels

    rng = np.random.default_rng(cfg.pivot_seed)
    Ub = basis.vectors.reshape(n, d, K * d)
    pivots = np.empty(n, dtype=np.int64)
    for k in range(K):
        members = np.flatnonzero(labels == k)
        pivots[members] = members[rng.integers(len(members))]
    X = np.einsum("nai,nbi->nab", Ub, Ub[pivots])
    R, _ = procrustes_batch(X, special=False)
    state = JointState(labels, R, K)
    if return_basis:
        return state, basis
    return state


def identity_init(n: int, K: int, d: int) -> JointState:
    """Contiguous balanced labels and identity blocks (ablation baseline)."""
    if n % K:
        raise InvalidInputError(f"K={K} does not divide n={n}")
    labels = np.repeat(np.arange(K), n // K)
    return JointState(labels, np.broadcast_to(np.eye(d), (n, d, d)).copy(), K)
