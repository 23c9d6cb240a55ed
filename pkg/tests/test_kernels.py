import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gpmsync import _pykernels, kernels
from conftest import BACKENDS


def test_backend_selected():
    assert kernels.BACKEND in ("cython", "python")


@pytest.mark.parametrize("d", [1, 2, 3, 4, 5])
def test_svd_reconstruction(backend, d, rng):
    X = rng.standard_normal((200, d, d))
    X[0] = 0.0
    X[1] = np.outer(rng.standard_normal(d), rng.standard_normal(d))
    U, s, V = kernels.svd_batch(X)
    rec = np.einsum("nij,nj,nkj->nik", U, s, V)
    assert np.max(np.abs(rec - X)) <= 1e-12 * max(1.0, np.abs(X).max())
    assert np.all(s >= 0) and np.all(np.diff(s, axis=1) <= 0)
    eye = np.eye(d)
    assert np.max(np.abs(np.einsum("nji,njk->nik", U, U) - eye)) < 1e-12
    assert np.max(np.abs(np.einsum("nji,njk->nik", V, V) - eye)) < 1e-12


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_det_matches_numpy(backend, d, rng):
    X = rng.standard_normal((100, d, d))
    X[0] = 0.0
    np.testing.assert_allclose(kernels.det_batch(X), np.linalg.det(X), rtol=1e-11, atol=1e-13)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled extension not built")
@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, (7, 3, 3), elements=st.floats(-1e3, 1e3)))
def test_backends_agree(X):
    c = BACKENDS["cython"]
    Up, sp, Vp = _pykernels.svd_batch(X)
    Uc, sc, Vc = c.svd_batch(X)
    scale = 1.0 + np.abs(X).max()
    np.testing.assert_allclose(sp, sc, atol=1e-10 * scale)
    np.testing.assert_allclose(_pykernels.det_batch(X), c.det_batch(X), atol=1e-9 * scale ** 3)


def test_block_apply_csr_matches_dense(backend, rng):
    n, d, c = 7, 3, 4
    rows, cols = np.triu_indices(n, 1)
    keep = rng.random(len(rows)) < 0.5
    rows, cols = rows[keep], cols[keep]
    B = rng.standard_normal((len(rows), d, d))
    r = np.concatenate([rows, cols])
    cc = np.concatenate([cols, rows])
    bb = np.concatenate([B, B.transpose(0, 2, 1)])
    order = np.lexsort((cc, r))
    indptr = np.concatenate([[0], np.cumsum(np.bincount(r, minlength=n))])
    Y = rng.standard_normal((n, d, c))
    out = kernels.block_apply_csr(indptr, cc[order], bb[order], Y)
    D = np.zeros((n, d, n, d))
    for k, (i, j) in enumerate(zip(rows, cols)):
        D[i, :, j, :] = B[k]
        D[j, :, i, :] = B[k].T
    for i in range(n):
        D[i, :, i, :] = np.eye(d)
    ref = (D.reshape(n * d, n * d) @ Y.reshape(n * d, c)).reshape(n, d, c)
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_pure_env_forces_python(monkeypatch):
    import importlib
    monkeypatch.setenv("GPMSYNC_PURE", "1")
    mod = importlib.reload(kernels)
    try:
        assert mod.BACKEND == "python"
        assert mod.svd_batch is _pykernels.svd_batch
    finally:
        monkeypatch.delenv("GPMSYNC_PURE")
        importlib.reload(kernels)
