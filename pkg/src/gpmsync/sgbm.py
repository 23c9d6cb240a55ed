"""Stochastic group block model: parameters, ground truth, joint states, sampling and I/O."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .blockmat import (
    GroupKind,
    InvalidInputError,
    ObservationMatrix,
    as_ortho_block,
    det_small,
    haar_sample,
    orthogonality_defect,
)

MAGIC = b"SGBM"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<4sHIIIBQdddd")


@dataclass(frozen=True)
class SgbmParams:
    """Model parameters; use :meth:`from_rates` or :meth:`from_log` to build."""

    n: int
    K: int
    kind: GroupKind
    p: float
    q: float
    alpha: float | None = None
    beta: float | None = None

    def __post_init__(self):
        if self.n < 1 or self.K < 1:
            raise InvalidInputError("n and K must be positive")
        if self.n % self.K:
            raise InvalidInputError(f"K={self.K} does not divide n={self.n}")
        for name, v in (("p", self.p), ("q", self.q)):
            if not (0.0 <= v <= 1.0):
                raise InvalidInputError(f"{name}={v} outside [0, 1]")

    @classmethod
    def from_rates(cls, n, K, kind, p, q):
        return cls(int(n), int(K), kind, float(p), float(q))

    @classmethod
    def from_log(cls, n, K, kind, alpha, beta, clip: bool = True):
        """``p = alpha log n / n`` and ``q = beta log n / n``.

        With ``clip`` a rate above one is clamped to one and the stored
        ``alpha``/``beta`` become the effective values ``n / log n``.
        """
        if alpha < 0 or beta < 0:
            raise InvalidInputError("alpha and beta must be nonnegative")
        scale = math.log(n) / n if n > 1 else 0.0
        p, q = alpha * scale, beta * scale
        if clip and scale > 0:
            if p > 1.0:
                p, alpha = 1.0, 1.0 / scale
            if q > 1.0:
                q, beta = 1.0, 1.0 / scale
        return cls(int(n), int(K), kind, p, q, float(alpha), float(beta))

    @property
    def d(self) -> int:
        return self.kind.d

    @property
    def m(self) -> int:
        return self.n // self.K

    def log_rates(self) -> tuple[float, float]:
        """``(alpha, beta)``, converting from ``(p, q)`` when needed."""
        if self.alpha is not None and self.beta is not None:
            return self.alpha, self.beta
        scale = self.n / math.log(self.n) if self.n > 1 else 0.0
        return self.p * scale, self.q * scale


class JointState:
    """A point of the feasible set in factored form: labels plus one block per node.

    The dense ``nd x Kd`` matrix has block ``(i, labels[i])`` equal to
    ``rotations[i]`` and zeros elsewhere.
    """

    def __init__(self, labels, rotations, K: int):
        labels = np.asarray(labels, dtype=np.int64).reshape(-1)
        rotations = np.asarray(rotations, dtype=np.float64)
        if rotations.ndim != 3 or rotations.shape[0] != labels.shape[0]:
            raise InvalidInputError("labels and rotations differ in length")
        if len(labels) and (labels.min() < 0 or labels.max() >= K):
            raise InvalidInputError("label out of range")
        self.labels = labels
        self.rotations = rotations
        self.K = int(K)
        self.labels.setflags(write=False)
        self.rotations.setflags(write=False)

    @property
    def n(self) -> int:
        return len(self.labels)

    @property
    def d(self) -> int:
        return self.rotations.shape[1]

    @property
    def balanced(self) -> bool:
        if self.n % self.K:
            return False
        return bool(np.all(np.bincount(self.labels, minlength=self.K) == self.n // self.K))

    def dense(self) -> np.ndarray:
        """Block array of shape ``(n, K, d, d)``."""
        V = np.zeros((self.n, self.K, self.d, self.d))
        V[np.arange(self.n), self.labels] = self.rotations
        return V

    def flat(self) -> np.ndarray:
        """The ``nd x Kd`` matrix."""
        n, K, d = self.n, self.K, self.d
        return np.transpose(self.dense(), (0, 2, 1, 3)).reshape(n * d, K * d)

    def frobenius_distance(self, other: "JointState") -> float:
        """``||dense(self) - dense(other)||_F`` without materialising either."""
        same = self.labels == other.labels
        diff = self.rotations[same] - other.rotations[same]
        total = float(np.sum(diff * diff))
        total += 2.0 * self.d * int(np.count_nonzero(~same))
        return math.sqrt(max(total, 0.0))

    def __eq__(self, other):
        return (isinstance(other, JointState) and self.K == other.K
                and np.array_equal(self.labels, other.labels)
                and np.array_equal(self.rotations, other.rotations))

    def __repr__(self):
        return f"JointState(n={self.n}, K={self.K}, d={self.d}, balanced={self.balanced})"


@dataclass(frozen=True, eq=False)
class GroundTruth:
    params: SgbmParams
    labels: np.ndarray
    rotations: np.ndarray
    seed: int

    def state(self) -> JointState:
        return JointState(self.labels, self.rotations, self.params.K)


def assemble_state(labels, rotations, K: int) -> JointState:
    """Build a :class:`JointState`; rotations are validated as orthogonal."""
    labels = np.asarray(labels)
    rotations = np.asarray(rotations, dtype=np.float64)
    if rotations.ndim != 3 or len(labels) != len(rotations):
        raise InvalidInputError("labels and rotations differ in length")
    if len(rotations):
        rotations = as_ortho_block(rotations)
    return JointState(labels, rotations, K)


def is_in_E(state: JointState, kind: GroupKind) -> bool:
    """Balanced, orthogonal, and determinant +1 everywhere when ``kind`` is SO(d)."""
    if not state.balanced:
        return False
    if state.n and np.any(orthogonality_defect(state.rotations) > 1e-10):
        return False
    if kind.special and state.n:
        return bool(np.all(det_small(state.rotations) > 0.0))
    return True


def _rngs(seed: int):
    coin_ss, haar_ss = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.default_rng(coin_ss), np.random.default_rng(haar_ss)


def generate(params: SgbmParams, seed: int) -> tuple[GroundTruth, ObservationMatrix]:
    """Sample ``(ground truth, A)`` from the model; deterministic in ``(params, seed)``.

    Coins and the label shuffle come from one stream, group elements from an
    independent one, so changing ``d`` leaves the edge set unchanged.
    """
    n, K, kind = params.n, params.K, params.kind
    coin_rng, haar_rng = _rngs(seed)

    labels = np.repeat(np.arange(K, dtype=np.int64), params.m)
    coin_rng.shuffle(labels)
    R = haar_sample(kind, haar_rng, n)

    iu, ju = np.triu_indices(n, 1)
    u = coin_rng.random(len(iu))
    same = labels[iu] == labels[ju]
    keep = np.where(same, u < params.p, u < params.q)
    rows, cols, same = iu[keep], ju[keep], same[keep]

    blocks = np.empty((len(rows), kind.d, kind.d))
    s = np.flatnonzero(same)
    blocks[s] = np.einsum("nij,nkj->nik", R[rows[s]], R[cols[s]])
    c = np.flatnonzero(~same)
    if len(c):
        blocks[c] = haar_sample(kind, haar_rng, len(c))

    truth = GroundTruth(params, labels, R, int(seed))
    return truth, ObservationMatrix(n, kind.d, rows, cols, blocks, validate=False)


def save_instance(path, truth: GroundTruth, A: ObservationMatrix) -> None:
    """Write the binary instance container plus a ``.json`` metadata sidecar."""
    prm = truth.params
    d = prm.d
    nan = float("nan")
    header = _HEADER.pack(MAGIC, FORMAT_VERSION, prm.n, prm.K, d, int(prm.kind.special),
                          truth.seed & 0xFFFFFFFFFFFFFFFF, prm.p, prm.q,
                          nan if prm.alpha is None else prm.alpha,
                          nan if prm.beta is None else prm.beta)
    edge_dtype = np.dtype([("i", "<u4"), ("j", "<u4"), ("b", "<f8", (d, d))])
    edges = np.empty(A.num_edges, dtype=edge_dtype)
    edges["i"] = A.rows
    edges["j"] = A.cols
    edges["b"] = A.blocks
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(truth.labels.astype("<u4").tobytes())
        fh.write(np.ascontiguousarray(truth.rotations, dtype="<f8").tobytes())
        fh.write(struct.pack("<Q", A.num_edges))
        fh.write(edges.tobytes())
    meta = {
        "format": "SGBM",
        "version": FORMAT_VERSION,
        "n": prm.n, "K": prm.K, "d": d, "group": prm.kind.code,
        "seed": truth.seed, "p": prm.p, "q": prm.q,
        "alpha": prm.alpha, "beta": prm.beta,
        "num_edges": A.num_edges,
    }
    Path(str(path) + ".json").write_text(json.dumps(meta, indent=2))


def load_instance(path) -> tuple[GroundTruth, ObservationMatrix]:
    """Read an instance written by :func:`save_instance`."""
    data = Path(path).read_bytes()
    if len(data) < _HEADER.size:
        raise InvalidInputError("truncated instance file")
    magic, version, n, K, d, special, seed, p, q, alpha, beta = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise InvalidInputError("not an SGBM instance file")
    if version != FORMAT_VERSION:
        raise InvalidInputError(f"unsupported instance version {version}")
    off = _HEADER.size
    labels = np.frombuffer(data, "<u4", n, off).astype(np.int64)
    off += 4 * n
    R = np.frombuffer(data, "<f8", n * d * d, off).reshape(n, d, d).copy()
    off += 8 * n * d * d
    (E,) = struct.unpack_from("<Q", data, off)
    off += 8
    edge_dtype = np.dtype([("i", "<u4"), ("j", "<u4"), ("b", "<f8", (d, d))])
    edges = np.frombuffer(data, edge_dtype, E, off)
    kind = GroupKind(d, bool(special))
    params = SgbmParams(n, K, kind, p, q,
                        None if math.isnan(alpha) else alpha,
                        None if math.isnan(beta) else beta)
    truth = GroundTruth(params, labels, R, int(seed))
    A = ObservationMatrix(n, d, edges["i"].astype(np.int64), edges["j"].astype(np.int64),
                          edges["b"].copy())
    return truth, A
