import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.linalg import orthogonal_procrustes, polar

from gpmsync.blockmat import GroupKind, InvalidInputError, block_apply
from gpmsync.projections import (
    balanced_assignment,
    mu,
    nuclear_norm,
    procrustes_batch,
    procrustes_gain,
    project_clustering,
    project_feasible,
    project_orthogonal,
)
from gpmsync.sgbm import JointState, SgbmParams, generate
from oracles import balanced_labelings, brute_assignment, haar_numpy, random_state


def test_nuclear_norm_examples(backend, rng):
    assert math.isclose(nuclear_norm(np.eye(3)), 3.0)
    assert math.isclose(nuclear_norm(np.diag([2.0, -1.0])), 3.0)
    X = rng.standard_normal((3, 3))
    assert abs(nuclear_norm(X) - np.linalg.svd(X, compute_uv=False).sum()) <= 1e-10


def test_project_orthogonal_examples(backend):
    np.testing.assert_allclose(project_orthogonal(5 * np.eye(2)), np.eye(2), atol=1e-15)
    Q = project_orthogonal(np.diag([2.0, -3.0]))
    np.testing.assert_allclose(Q, np.diag([1.0, -1.0]), atol=1e-15)
    assert math.isclose(float(np.sum(Q * np.diag([2.0, -3.0]))), 5.0)


def test_project_orthogonal_matches_scipy(backend, rng):
    for _ in range(100):
        X = rng.standard_normal((3, 3))
        Q = project_orthogonal(X)
        np.testing.assert_allclose(Q, polar(X)[0], atol=1e-10)
        R, _ = orthogonal_procrustes(np.eye(3), X)
        np.testing.assert_allclose(Q, R, atol=1e-10)
        assert abs(np.sum(X * Q) - np.linalg.svd(X, compute_uv=False).sum()) <= 1e-10


def test_project_orthogonal_sampled_maximality(backend, rng):
    X = rng.standard_normal((3, 3))
    Q = project_orthogonal(X)
    best = np.sum(X * Q)
    for _ in range(1000):
        assert best >= np.sum(X * haar_numpy(rng, 3)) - 1e-12


def test_project_special(backend, rng):
    so3 = GroupKind(3, True)
    for _ in range(100):
        X = rng.standard_normal((3, 3))
        Q = project_orthogonal(X, so3)
        assert abs(np.linalg.det(Q) - 1) < 1e-10
        assert abs(np.sum(X * Q) - procrustes_gain(X, True)) < 1e-10
        best = max(np.sum(X * haar_numpy(rng, 3, True)) for _ in range(300))
        assert np.sum(X * Q) >= best - 1e-12


def test_procrustes_flags(backend):
    Q, flag = project_orthogonal(np.zeros((3, 3)), with_flag=True)
    np.testing.assert_array_equal(Q, np.eye(3))
    assert flag
    _, flag = project_orthogonal(np.diag([1.0, 1.0, 0.0]), with_flag=True)
    assert flag
    _, flag = project_orthogonal(np.diag([3.0, 2.0, 1.0]), with_flag=True)
    assert not flag
    # SO(3): sigma_2 == sigma_3 with negative determinant is a tie
    _, flag = project_orthogonal(np.diag([3.0, 1.0, -1.0]), GroupKind(3, True), with_flag=True)
    assert flag
    _, flag = project_orthogonal(np.diag([3.0, 2.0, -1.0]), GroupKind(3, True), with_flag=True)
    assert not flag
    with pytest.raises(InvalidInputError):
        procrustes_batch(np.full((1, 2, 2), np.inf))


def test_mu_examples(backend, rng):
    X = np.broadcast_to(np.eye(3), (4, 2, 3, 3))
    np.testing.assert_allclose(mu(X), 3.0)
    np.testing.assert_array_equal(mu(np.zeros((2, 2, 3, 3))), 0.0)
    X = rng.standard_normal((5, 3, 2, 2))
    ref = np.linalg.svd(X, compute_uv=False).sum(-1)
    np.testing.assert_allclose(mu(X), ref, atol=1e-10)
    with pytest.raises(InvalidInputError):
        mu(np.zeros((2, 3, 3)))


def test_assignment_worked_example():
    M = np.array([[3, 0], [3, 0], [0, 3], [2, 0]], dtype=float)
    sol = project_clustering(M)
    np.testing.assert_array_equal(sol.labels, [0, 0, 1, 1])
    assert sol.objective == 9.0


def test_assignment_indicator(rng):
    labels = rng.permutation(np.repeat(np.arange(4), 5))
    sol = project_clustering(np.eye(4)[labels])
    np.testing.assert_array_equal(sol.labels, labels)
    assert sol.objective == 20 and not sol.tie


def test_assignment_brute_force(rng):
    for trial in range(300):
        K = [2, 4][trial % 2]
        n = K * int(rng.integers(1, 8 // K + 1))
        M = rng.random((n, K)) if trial % 3 else rng.integers(0, 4, (n, K)).astype(float)
        sol = balanced_assignment(M)
        best, _ = brute_assignment(M)
        assert sol.objective == best
        assert np.all(np.bincount(sol.labels, minlength=K) == n // K)
        assert sol.objective == math.fsum(M[np.arange(n), sol.labels])


def test_assignment_tie_flag():
    M = np.ones((4, 2))
    assert balanced_assignment(M).tie
    M = np.array([[1.0, 0], [1, 0], [0, 1], [0, 1]])
    assert not balanced_assignment(M).tie


def test_assignment_beats_random_clusterings(rng):
    M = rng.random((30, 3))
    sol = project_clustering(M)
    base = np.repeat(np.arange(3), 10)
    for _ in range(1000):
        lab = rng.permutation(base)
        assert sol.objective >= M[np.arange(30), lab].sum() - 1e-12


def test_assignment_errors():
    with pytest.raises(InvalidInputError):
        balanced_assignment(np.ones((5, 2)))
    with pytest.raises(InvalidInputError):
        balanced_assignment(np.array([[np.nan, 0], [0, 1]]))
    sol = balanced_assignment(np.array([[1.0, 2.0, 0.0]]).T.repeat(3, 1), m=1)
    assert sorted(sol.labels) == [0, 1, 2]


@settings(max_examples=80, deadline=None)
@given(arrays(np.float64, st.tuples(st.sampled_from([2, 4, 6]), st.just(2)),
              elements=st.floats(0, 10, allow_nan=False)))
def test_assignment_property(M):
    sol = balanced_assignment(M)
    best, _ = brute_assignment(M)
    assert sol.objective == best


def test_project_feasible_fixed_points(backend, rng):
    labels, R = random_state(rng, 6, 2, 3)
    st_ = JointState(labels, R, 2)
    out = project_feasible(st_.dense())
    assert out == JointState(labels, R, 2) or out.frobenius_distance(st_) < 1e-12
    prm = SgbmParams.from_rates(12, 3, GroupKind(3), 1.0, 0.0)
    truth, A = generate(prm, 3)
    V = project_feasible(block_apply(A, truth.state().dense()))
    np.testing.assert_array_equal(V.labels, truth.labels)
    assert np.max(np.abs(V.rotations - truth.rotations)) < 1e-12


def test_project_feasible_optimality_oracle(backend):
    rng = np.random.default_rng(9)
    for _ in range(50):
        n = int(rng.choice([2, 4, 6]))
        X = rng.standard_normal((n, 2, 2, 2))
        V = project_feasible(X)
        best = float(np.sum(X * V.dense()))
        stacks = [np.stack([haar_numpy(rng, 2) for _ in range(n)]) for _ in range(200)]
        for lab in balanced_labelings(n, 2):
            sel = X[np.arange(n), list(lab)]
            for Rs in stacks:
                assert best >= float(np.sum(sel * Rs)) - 1e-12


def test_project_feasible_equivariance(backend, rng):
    checked = 0
    for _ in range(60):
        X = rng.standard_normal((6, 3, 2, 2))
        perm = rng.permutation(3)
        U = np.stack([haar_numpy(rng, 2) for _ in range(3)])
        # (X Q) block (i, perm[b]) = X[i, b] U[b]
        XQ = np.zeros_like(X)
        XQ[:, perm] = np.einsum("nbij,bjk->nbik", X, U)
        V1, f1 = project_feasible(X, details=True)
        V2, f2 = project_feasible(XQ, details=True)
        if f1.degenerate or f2.degenerate:
            continue
        D1 = V1.dense()
        ref = np.zeros_like(D1)
        ref[:, perm] = np.einsum("nbij,bjk->nbik", D1, U)
        assert np.max(np.abs(V2.dense() - ref)) <= 1e-10
        checked += 1
    assert checked > 40


def test_project_feasible_errors():
    with pytest.raises(InvalidInputError):
        project_feasible(np.zeros((3, 2, 2, 2)))
    with pytest.raises(InvalidInputError):
        project_feasible(np.zeros((4, 2, 2)))
