"""Quotient-space errors, recovery-condition checks and parameter-region formulas."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .blockmat import GroupKind, InvalidInputError, ObservationMatrix, block_apply
from .projections import balanced_assignment, mu, procrustes_batch, procrustes_gain
from .sgbm import GroundTruth, JointState
from .spectral import orthogonal_iteration


# --------------------------------------------------------------------------
# errors

def _overlap(L1, L2, K):
    C = np.zeros((K, K), dtype=np.int64)
    np.add.at(C, (L1, L2), 1)
    return C


def clustering_error(labels, ref_labels, K: int) -> float:
    """``min_P ||H - H_ref P||_F`` over cluster permutations.

    Equals ``sqrt(2 (n - best overlap))`` where the best overlap is a K x K
    maximum-weight matching of the cluster contingency table.
    """
    L1 = np.asarray(labels, dtype=np.int64)
    L2 = np.asarray(ref_labels, dtype=np.int64)
    if L1.shape != L2.shape:
        raise InvalidInputError("labelings differ in length")
    C = _overlap(L1, L2, K)
    best = balanced_assignment(C.T.astype(np.float64), m=1)
    matched = int(round(best.objective))
    return math.sqrt(2.0 * (len(L1) - matched))


def _check_pair(V1: JointState, V2: JointState):
    if (V1.n, V1.K, V1.d) != (V2.n, V2.K, V2.d):
        raise InvalidInputError(
            f"shape mismatch: {(V1.n, V1.K, V1.d)} vs {(V2.n, V2.K, V2.d)}")


def align(V1: JointState, V2: JointState, kind: GroupKind):
    """Best ``Q`` in the permutation-times-group symmetry aligning ``V2`` to ``V1``.

    Returns ``(perm, U)`` meaning cluster ``b`` of ``V2`` maps to column
    ``perm[b]`` of ``V1`` after right-multiplication by ``U[b]``.
    """
    _check_pair(V1, V2)
    K, d = V1.K, V1.d
    S = np.zeros((K, K, d, d))
    cross = np.einsum("nji,njk->nik", V2.rotations, V1.rotations)
    np.add.at(S, (V1.labels, V2.labels), cross)
    flatS = S.reshape(K * K, d, d)
    gain = procrustes_gain(flatS, kind.special).reshape(K, K)
    sol = balanced_assignment(gain.T, m=1)
    perm = sol.labels
    Q, _ = procrustes_batch(S[perm, np.arange(K)], kind.special)
    return perm, Q


def quotient_distance(V1: JointState, V2: JointState, kind: GroupKind) -> float:
    """``min_Q ||V1 - V2 Q||_F`` over cluster permutations composed with per-cluster group actions."""
    perm, U = align(V1, V2, kind)
    mapped = perm[V2.labels]
    hit = mapped == V1.labels
    aligned = np.einsum("nij,njk->nik", V2.rotations[hit], U[V2.labels[hit]])
    diff = V1.rotations[hit] - aligned
    total = float(np.sum(diff * diff)) + 2.0 * V1.d * int(np.count_nonzero(~hit))
    return math.sqrt(max(total, 0.0))


def estimation_error(V: JointState, truth: GroundTruth, kind: GroupKind) -> float:
    return quotient_distance(V, truth.state(), kind)


# --------------------------------------------------------------------------
# per-instance recovery conditions

def truth_scores(A: ObservationMatrix, truth: GroundTruth) -> np.ndarray:
    """``mu(A V*)``, the ``n x K`` score matrix at the ground truth."""
    return mu(block_apply(A, truth.state().dense()))


def check_separation(A: ObservationMatrix, truth: GroundTruth) -> float | None:
    """Largest ``chi`` such that ``A`` separates ``V*`` by ``chi m p``; ``None`` if none positive."""
    prm = truth.params
    if prm.p <= 0.0:
        raise InvalidInputError("separation scale m*p is zero (p = 0)")
    M = truth_scores(A, truth)
    n, K = M.shape
    if K == 1:
        return math.inf
    rows = np.arange(n)
    own = M[rows, truth.labels]
    others = M.copy()
    others[rows, truth.labels] = -np.inf
    margin = float(np.min(own - others.max(axis=1)))
    chi = margin / (prm.m * prm.p)
    return chi if chi > 0 else None


def magnitude_threshold(truth: GroundTruth) -> float:
    """Right-hand side ``sqrt(2 K beta) / alpha * m p`` of the magnitude condition."""
    prm = truth.params
    _, beta = prm.log_rates()
    # p / alpha = log n / n in either parameterisation
    return math.sqrt(2.0 * prm.K * beta) * prm.m * math.log(prm.n) / prm.n


def check_magnitude(A: ObservationMatrix, truth: GroundTruth) -> bool:
    M = truth_scores(A, truth)
    own = M[np.arange(M.shape[0]), truth.labels]
    return bool(np.all(own >= magnitude_threshold(truth)))


def rho_required(chi: float | None, alpha: float, beta: float, K: int, d: int) -> float:
    """``2 sqrt(2) sqrt(d^2/chi^2 + alpha^2/(2 K beta))``; infinite when undefined."""
    if chi is None or chi <= 0 or beta <= 0:
        return math.inf
    return 2.0 * math.sqrt(2.0) * math.sqrt(d * d / (chi * chi) + alpha * alpha / (2.0 * K * beta))


@dataclass(frozen=True)
class ConditionReport:
    separation_chi: float | None
    magnitude_ok: bool
    init_ratio: float
    rho_required: float

    @property
    def init_ok(self) -> bool:
        return self.init_ratio <= 1.0 / self.rho_required

    @property
    def all_ok(self) -> bool:
        return self.separation_chi is not None and self.magnitude_ok and self.init_ok

    def to_json(self) -> dict:
        out = asdict(self)
        out["init_ok"] = self.init_ok
        out["all_ok"] = self.all_ok
        if math.isinf(out["rho_required"]):
            out["rho_required"] = None
        if out["separation_chi"] is not None and math.isinf(out["separation_chi"]):
            out["separation_chi"] = None
        return out


def check_all_conditions(A: ObservationMatrix, truth: GroundTruth, V0: JointState) -> ConditionReport:
    """Evaluate the three deterministic recovery conditions for one instance."""
    prm = truth.params
    alpha, beta = prm.log_rates()
    chi = check_separation(A, truth)
    mag = check_magnitude(A, truth)
    eps0 = estimation_error(V0, truth, GroupKind.orthogonal(prm.d))
    return ConditionReport(chi, mag, eps0 / math.sqrt(prm.m),
                           rho_required(chi, alpha, beta, prm.K, prm.d))


# --------------------------------------------------------------------------
# parameter regions

def _f(tau: float, alpha: float) -> float:
    """``alpha - tau log(e alpha / tau)``, continuous at ``tau = 0``."""
    if tau <= 0.0:
        return alpha
    return alpha - tau * math.log(math.e * alpha / tau)


def _bisect(fn, lo, hi, tol=1e-12, max_iter=400):
    """Root of a function decreasing from positive at ``lo`` to negative at ``hi``."""
    for _ in range(max_iter):
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi or hi - lo <= tol:
            break
        if fn(mid) > 0.0:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def sbm_threshold_ok(alpha: float, beta: float, K: float) -> bool:
    return math.sqrt(alpha) - math.sqrt(beta) > math.sqrt(K)


@dataclass(frozen=True)
class RegionVerdict:
    alpha: float
    beta: float
    K: float
    sbm_threshold_ok: bool
    gpm_cond1_ok: bool
    gpm_cond2_ok: bool
    chi: float | None = None
    tau_star: float | None = None
    c_tilde: float | None = None
    tau_tilde: float | None = None

    def to_json(self) -> dict:
        return asdict(self)


def region_verdict(alpha: float, beta: float, K: float, d: int) -> RegionVerdict:
    """Evaluate the sufficient region given by the two inequalities and build a witness ``chi``.

    When both inequalities hold, ``tau*`` solves ``alpha - tau log(e alpha/tau) = K``
    on ``(0, alpha)``; ``c~`` takes half the slack ``tau*^2/(2 K beta) - 1``;
    ``tau~`` is the midpoint of ``(sqrt(2 c~ K beta), tau*)`` and
    ``chi = d (tau~ - sqrt(2 c~ K beta)) / alpha``.
    """
    if alpha <= 0 or beta < 0 or K <= 0 or d <= 0:
        raise InvalidInputError("region_verdict needs alpha, K, d > 0 and beta >= 0")
    s = math.sqrt(2.0 * K * beta)
    cond1 = s < alpha
    cond2 = cond1 and _f(s, alpha) > K
    sbm = sbm_threshold_ok(alpha, beta, K)
    if not (cond1 and cond2):
        return RegionVerdict(alpha, beta, K, sbm, cond1, cond2)
    tau_star = _bisect(lambda t: _f(t, alpha) - K, 1e-12, alpha)
    if beta > 0:
        c_max = tau_star * tau_star / (2.0 * K * beta)
        c_tilde = 1.0 + 0.5 * (c_max - 1.0)
        lower = math.sqrt(2.0 * c_tilde * K * beta)
    else:
        c_tilde = 2.0
        lower = 0.0
    tau_tilde = 0.5 * (lower + tau_star)
    chi = d * (tau_tilde - lower) / alpha
    return RegionVerdict(alpha, beta, K, sbm, cond1, cond2, chi, tau_star, c_tilde, tau_tilde)


def gpm_boundary_residual(alpha: float, beta: float, K: float) -> float:
    """``alpha - sqrt(2 K beta) log(e alpha / sqrt(2 K beta)) - K``."""
    return _f(math.sqrt(2.0 * K * beta), alpha) - K


def gpm_boundary_beta(alpha: float, K: float) -> float | None:
    """Largest ``beta`` still inside the sufficient region at this ``alpha``.

    ``None`` when ``alpha <= K`` (the region is empty for every beta).
    """
    if alpha <= K:
        return None
    hi = alpha * alpha / (2.0 * K)
    return _bisect(lambda b: gpm_boundary_residual(alpha, b, K), 0.0, hi, tol=0.0)


def sbm_boundary_beta(alpha: float, K: float) -> float | None:
    """``beta`` on the curve ``sqrt(alpha) - sqrt(beta) = sqrt(K)``."""
    r = math.sqrt(alpha) - math.sqrt(K)
    return None if r < 0 else r * r


# --------------------------------------------------------------------------
# diagnostics

def spectral_deviation(A: ObservationMatrix, truth: GroundTruth, rtol: float = 1e-6,
                       seed: int = 0) -> float:
    """Operator norm of ``A - p V* V*^T`` by block power iteration."""
    Vs = truth.state().flat()
    p = truth.params.p
    N = A.n * A.d

    def apply(X):
        return A.matmul(X) - p * (Vs @ (Vs.T @ X))

    block = min(N, 4)
    basis = orthogonal_iteration(apply, N, block, tol=0.0, max_sweeps=2000, shift=0.0,
                                 rng=np.random.default_rng(seed), block=block,
                                 value_rtol=rtol * 1e-3, by_magnitude=True)
    return float(np.max(np.abs(basis.values)))
