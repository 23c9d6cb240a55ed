import json
import math

import numpy as np
import pytest

from gpmsync.blockmat import GroupKind, InvalidInputError, ObservationMatrix
from gpmsync.metrics import (
    check_all_conditions,
    check_magnitude,
    check_separation,
    clustering_error,
    estimation_error,
    gpm_boundary_beta,
    gpm_boundary_residual,
    magnitude_threshold,
    quotient_distance,
    region_verdict,
    rho_required,
    sbm_boundary_beta,
    sbm_threshold_ok,
    spectral_deviation,
)
from gpmsync.sgbm import GroundTruth, JointState, SgbmParams, generate
from oracles import brute_clustering_error, grid_quotient_distance_2d, haar_numpy, random_state


def _state(rng, n, K, d, special=False):
    return JointState(*random_state(rng, n, K, d, special), K)


def _act(V, perm, U):
    """``V Q`` for ``Q`` = per-cluster right action then relabelling by ``perm``."""
    R = np.einsum("nij,njk->nik", V.rotations, U[V.labels])
    return JointState(perm[V.labels], R, V.K)


# ---------------------------------------------------------------- clustering error

def test_clustering_error_examples(rng):
    L = np.array([0, 0, 0, 1, 1, 1])
    assert clustering_error(L, L, 2) == 0
    assert clustering_error(1 - L, L, 2) == 0
    L2 = np.array([0, 0, 1, 0, 1, 1])
    assert math.isclose(clustering_error(L2, L, 2), 2.0)
    assert math.isclose(brute_clustering_error(L2, L, 2), 2.0)
    for _ in range(100):
        K = int(rng.integers(2, 5))
        a = rng.permutation(np.repeat(np.arange(K), 3))
        b = rng.permutation(np.repeat(np.arange(K), 3))
        assert math.isclose(clustering_error(a, b, K), brute_clustering_error(a, b, K),
                            abs_tol=1e-12)
    with pytest.raises(InvalidInputError):
        clustering_error(L, L[:4], 2)


# ---------------------------------------------------------------- quotient metric

@pytest.mark.parametrize("kind", [GroupKind(3), GroupKind(3, True), GroupKind(2, True)])
def test_quotient_orbit_zero(backend, rng, kind):
    V = _state(rng, 12, 3, kind.d, kind.special)
    assert quotient_distance(V, V, kind) <= 1e-12
    perm = rng.permutation(3)
    U = np.stack([haar_numpy(rng, kind.d, kind.special) for _ in range(3)])
    assert quotient_distance(V, _act(V, perm, U), kind) <= 1e-10


def test_quotient_negated_block_matches_grid(rng):
    V = _state(rng, 4, 2, 2)
    R = np.array(V.rotations)
    R[0] = -R[0]
    W = JointState(V.labels, R, 2)
    got = quotient_distance(W, V, GroupKind(2))
    ref = grid_quotient_distance_2d(W.labels, W.rotations, V.labels, V.rotations, 2, False)
    assert abs(got - ref) <= 1e-6


@pytest.mark.parametrize("special", [False, True])
def test_quotient_matches_grid_oracle(special):
    rng = np.random.default_rng(100 + special)
    kind = GroupKind(2, special)
    for _ in range(10):
        V1, V2 = _state(rng, 4, 2, 2), _state(rng, 4, 2, 2)
        got = quotient_distance(V1, V2, kind)
        ref = grid_quotient_distance_2d(V1.labels, V1.rotations, V2.labels, V2.rotations, 2, special)
        assert abs(got - ref) <= 1e-6


def test_quotient_matches_identity_form(rng):
    # squared distance = 2nd - 2 * best gain
    from gpmsync.metrics import align
    for kind in (GroupKind(3), GroupKind(3, True)):
        V1, V2 = _state(rng, 9, 3, 3), _state(rng, 9, 3, 3)
        perm, U = align(V1, V2, kind)
        Q = np.zeros((9, 9))
        for b in range(3):
            Q[3 * b:3 * b + 3, 3 * perm[b]:3 * perm[b] + 3] = U[b]
        direct = np.linalg.norm(V1.flat() - V2.flat() @ Q)
        assert math.isclose(quotient_distance(V1, V2, kind), direct, rel_tol=1e-12, abs_tol=1e-12)


def test_quotient_shape_mismatch(rng):
    with pytest.raises(InvalidInputError):
        quotient_distance(_state(rng, 6, 2, 2), _state(rng, 6, 3, 2), GroupKind(2))


def test_special_dominates_relaxed(backend, rng):
    for _ in range(100):
        V1, V2 = _state(rng, 6, 2, 3), _state(rng, 6, 2, 3)
        assert quotient_distance(V1, V2, GroupKind(3, True)) >= quotient_distance(V1, V2, GroupKind(3)) - 1e-12


def test_metric_axioms(rng):
    for kind in (GroupKind(2), GroupKind(3, True)):
        for _ in range(100):
            a, b, c = (_state(rng, 6, 2, kind.d) for _ in range(3))
            ab, ba = quotient_distance(a, b, kind), quotient_distance(b, a, kind)
            assert abs(ab - ba) <= 1e-10
            assert quotient_distance(a, c, kind) <= ab + quotient_distance(b, c, kind) + 1e-9


def test_estimation_error_truth():
    truth, _ = generate(SgbmParams.from_log(30, 3, GroupKind(3, True), 8, 2), 0)
    assert estimation_error(truth.state(), truth, GroupKind(3, True)) <= 1e-12


# ---------------------------------------------------------------- conditions

def test_separation_complete():
    prm = SgbmParams.from_rates(30, 3, GroupKind(3), 1.0, 0.0)
    truth, A = generate(prm, 1)
    assert math.isclose(check_separation(A, truth), 3.0, rel_tol=1e-12)


def test_separation_absent_on_duplicate_scores():
    # every node sees identical blocks from both clusters -> equal score columns
    prm = SgbmParams.from_rates(4, 2, GroupKind(2), 1.0, 0.0)
    labels = np.array([0, 0, 1, 1])
    R = np.stack([np.eye(2)] * 4)
    truth = GroundTruth(prm, labels, R, 0)
    rows, cols = np.triu_indices(4, 1)
    A = ObservationMatrix(4, 2, rows, cols, np.broadcast_to(np.eye(2), (6, 2, 2)))
    assert check_separation(A, truth) is None


def test_separation_zero_p():
    truth, A = generate(SgbmParams.from_rates(10, 2, GroupKind(2), 0.0, 0.5), 0)
    with pytest.raises(InvalidInputError):
        check_separation(A, truth)


def test_magnitude_examples():
    n = 30
    prm = SgbmParams(n, 3, GroupKind(3), 1.0, 0.0, n / math.log(n), 0.0)
    truth, A = generate(prm, 0)
    assert magnitude_threshold(truth) == 0 and check_magnitude(A, truth)
    # an edgeless A keeps the identity diagonal: own score d, threshold above it once beta is large
    prm2 = SgbmParams.from_log(n, 3, GroupKind(3), 10.0, 9.0)
    truth2, _ = generate(prm2, 0)
    empty = ObservationMatrix(n, 3, [], [], np.zeros((0, 3, 3)))
    assert magnitude_threshold(truth2) > 3
    assert not check_magnitude(empty, truth2)


def test_magnitude_raw_rates_convert():
    n = 60
    raw = SgbmParams.from_rates(n, 2, GroupKind(2), 0.4, 0.1)
    logp = SgbmParams.from_log(n, 2, GroupKind(2), 0.4 * n / math.log(n), 0.1 * n / math.log(n))
    t1, _ = generate(raw, 0)
    t2, _ = generate(logp, 0)
    assert math.isclose(magnitude_threshold(t1), magnitude_threshold(t2), rel_tol=1e-12)


def test_conditions_montecarlo_n100():
    prm = SgbmParams.from_log(100, 2, GroupKind(3, True), 40, 4)
    sep = mag = 0
    for seed in range(20):
        truth, A = generate(prm, seed)
        sep += check_separation(A, truth) is not None
        mag += check_magnitude(A, truth)
    assert sep >= 19 and mag >= 19


def test_rho_and_report():
    assert rho_required(None, 10, 2, 2, 3) == math.inf
    assert math.isclose(rho_required(1.0, 4.0, 2.0, 2, 3),
                        2 * math.sqrt(2) * math.sqrt(9 + 16 / 8))
    truth, A = generate(SgbmParams.from_log(60, 2, GroupKind(3), 20, 3), 0)
    rep = check_all_conditions(A, truth, truth.state())
    assert rep.init_ratio <= 1e-12 and rep.init_ok
    js = json.loads(json.dumps(rep.to_json()))
    assert js["all_ok"] == rep.all_ok


# ---------------------------------------------------------------- region formulas

def test_region_worked_example():
    v = region_verdict(40, 4, 3, 3)
    s = math.sqrt(24)
    assert v.gpm_cond1_ok and v.gpm_cond2_ok and v.chi > 0
    assert abs((40 - s * math.log(math.e * 40 / s)) - 24.8) < 0.1
    assert math.isclose(40 - v.tau_star * math.log(math.e * 40 / v.tau_star), 3, abs_tol=1e-9)
    assert 1 < v.c_tilde and math.sqrt(2 * v.c_tilde * 3 * 4) < v.tau_tilde < v.tau_star < 40
    json.dumps(v.to_json())


def test_region_diagonal():
    # on alpha = beta the second inequality fails up to alpha ~ 7.28 K and holds beyond
    for K in (2, 3, 4):
        for a in np.linspace(0.5, 7.2 * K, 40):
            assert not region_verdict(a, a, K, 3).gpm_cond2_ok
        assert region_verdict(7.4 * K, 7.4 * K, K, 3).gpm_cond2_ok


def test_region_sbm_threshold():
    assert not region_verdict(1, 1, 4, 3).sbm_threshold_ok
    assert sbm_threshold_ok(16, 1, 4)


def test_region_beta_zero():
    v = region_verdict(5, 0, 3, 2)
    assert v.gpm_cond1_ok and v.gpm_cond2_ok and v.c_tilde == 2 and v.chi > 0
    assert not region_verdict(2, 0, 3, 2).gpm_cond2_ok


def test_region_errors():
    with pytest.raises(InvalidInputError):
        region_verdict(0, 1, 2, 3)
    with pytest.raises(InvalidInputError):
        region_verdict(1, -1, 2, 3)


def test_boundaries():
    assert sbm_boundary_beta(3, 3) == 0
    for K in (2, 3):
        for a in (5.0, 12.0, 40.0):
            b = gpm_boundary_beta(a, K)
            assert abs(gpm_boundary_residual(a, b, K)) <= 1e-9
    assert gpm_boundary_beta(2, 3) is None


# ---------------------------------------------------------------- diagnostics

def test_spectral_deviation_trivial():
    truth, A = generate(SgbmParams.from_rates(12, 2, GroupKind(2), 1.0, 0.0), 0)
    assert spectral_deviation(A, truth) <= 1 + 2 + 1e-9
    truth0, A0 = generate(SgbmParams.from_rates(12, 2, GroupKind(2), 0.0, 0.0), 0)
    assert math.isclose(spectral_deviation(A0, truth0), 1.0, rel_tol=1e-9)


def test_spectral_deviation_dense_oracle():
    truth, A = generate(SgbmParams.from_log(100, 2, GroupKind(3), 10, 2), 4)
    Vs = truth.state().flat()
    ref = np.max(np.abs(np.linalg.eigvalsh(A.dense() - truth.params.p * Vs @ Vs.T)))
    assert abs(spectral_deviation(A, truth) - ref) <= 1e-4 * ref
