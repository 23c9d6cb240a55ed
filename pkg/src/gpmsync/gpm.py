"""The generalized power iteration ``V <- Proj_F(A V)`` with final SO(d) rounding."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .blockmat import GroupKind, InvalidInputError, ObservationMatrix, block_apply, det_small
from .metrics import estimation_error
from .projections import project_feasible
from .sgbm import GroundTruth, JointState


@dataclass
class GpmConfig:
    """Iteration controls.

    ``shift`` adds ``shift * I`` to ``A`` inside the iteration; ``"auto"``
    uses ``1 + max degree``, an upper bound on ``||A||`` that makes the
    shifted matrix positive semidefinite.
    """

    max_iters: int = 100
    tol: float = 1e-12
    track_error: GroundTruth | None = None
    shift: float | str | None = None

    def __post_init__(self):
        if self.max_iters < 1:
            raise InvalidInputError("max_iters must be >= 1")
        if self.tol < 0:
            raise InvalidInputError("tol must be >= 0")


@dataclass
class GpmTrace:
    iterates_used: int = 0
    per_iter_change: list = field(default_factory=list)
    per_iter_error: list | None = None
    objective: list = field(default_factory=list)
    converged: bool = False
    degenerate_projections: int = 0

    def rows(self):
        """``(iter, frob_change, epsilon_relaxed, objective)`` per iterate, starting at ``V^0``."""
        out = []
        for t, obj in enumerate(self.objective):
            change = self.per_iter_change[t - 1] if t > 0 else None
            err = self.per_iter_error[t] if self.per_iter_error is not None else None
            out.append((t, change, err, obj))
        return out


TRACE_COLUMNS = ("iter", "frob_change", "epsilon_relaxed", "objective")


def write_trace_csv(trace: GpmTrace, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(TRACE_COLUMNS)
        for row in trace.rows():
            w.writerow(["" if v is None else repr(v) for v in row])


def round_special(state: JointState) -> JointState:
    """Map every block into SO(d).

    Odd ``d``: ``R -> det(R) R``. For even ``d`` that map preserves the
    determinant, so blocks with ``det = -1`` are instead right-multiplied by
    ``diag(1, ..., 1, -1)``; both are a common right action on each cluster
    and leave the quotient error unchanged when clusters are sign-consistent.
    """
    R = np.array(state.rotations)
    if state.n == 0:
        return state
    det = np.sign(det_small(R))
    det[det == 0] = 1.0
    if state.d % 2 == 1:
        R = R * det[:, None, None]
    else:
        R[det < 0, :, -1] *= -1.0
    return JointState(state.labels, R, state.K)


def _resolve_shift(A: ObservationMatrix, shift) -> float:
    if shift is None:
        return 0.0
    if shift == "auto":
        return A.gershgorin_bound()
    return float(shift)


def objective(A: ObservationMatrix, V: JointState) -> float:
    """``tr(V^T A V)``."""
    AV = block_apply(A, V.dense())
    return _objective_from_product(AV, V)


def _objective_from_product(AV, V: JointState) -> float:
    sel = AV[np.arange(V.n), V.labels]
    return float(np.einsum("nij,nij->", sel, V.rotations))


def run(A: ObservationMatrix, V0: JointState, kind: GroupKind, cfg: GpmConfig = GpmConfig()):
    """Iterate ``V <- Proj_F(A V)``; round into SO(d) at the end when ``kind`` is special.

    Stops once consecutive dense iterates differ by at most ``cfg.tol`` in
    Frobenius norm, or after ``cfg.max_iters`` updates.

    Returns
    -------
    (JointState, GpmTrace)
    """
    if V0.n != A.n or V0.d != A.d:
        raise InvalidInputError(f"V0 is ({V0.n}, d={V0.d}); A is ({A.n}, d={A.d})")
    if kind.d != A.d:
        raise InvalidInputError(f"group {kind} does not match block size {A.d}")
    if not V0.balanced:
        raise InvalidInputError("V0 must be balanced")
    lam = _resolve_shift(A, cfg.shift)
    relaxed = GroupKind.orthogonal(A.d)
    truth = cfg.track_error

    trace = GpmTrace(per_iter_error=[] if truth is not None else None)
    V = V0
    if truth is not None:
        trace.per_iter_error.append(estimation_error(V, truth, relaxed))
    for _ in range(cfg.max_iters):
        Vd = V.dense()
        X = block_apply(A, Vd)
        trace.objective.append(_objective_from_product(X, V))
        if lam:
            X += lam * Vd
        V_next, flags = project_feasible(X, details=True)
        if flags.degenerate:
            trace.degenerate_projections += 1
        change = V_next.frobenius_distance(V)
        trace.per_iter_change.append(change)
        trace.iterates_used += 1
        V = V_next
        if truth is not None:
            trace.per_iter_error.append(estimation_error(V, truth, relaxed))
        if change <= cfg.tol:
            trace.converged = True
            break
    trace.objective.append(objective(A, V))
    if kind.special:
        V = round_special(V)
    return V, trace


def contraction_ratios(errors, floor: float = 1e-9):
    """``eps[t+1] / eps[t]`` for every step where ``eps[t] > floor``."""
    out = []
    for a, b in zip(errors[:-1], errors[1:]):
        if a > floor:
            out.append(b / a)
    return out

