import numpy as np
import pytest

from gpmsync import _pykernels, kernels

try:
    from gpmsync import _ckernels
except ImportError:  # extension not built
    _ckernels = None

BACKENDS = {"python": _pykernels}
if _ckernels is not None:
    BACKENDS["cython"] = _ckernels


@pytest.fixture(params=sorted(BACKENDS))
def backend(request, monkeypatch):
    """Route every kernel call through one backend for the duration of a test."""
    impl = BACKENDS[request.param]
    for name in ("svd_batch", "det_batch", "block_apply_csr"):
        monkeypatch.setattr(kernels, name, getattr(impl, name))
    return request.param


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance") or sys.modules.get("tests.test_acceptance")
    lines = getattr(mod, "REPORT", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
