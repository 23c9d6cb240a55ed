"""Kernel dispatch: compiled extension if importable, numpy fallback otherwise.

Set ``GPMSYNC_PURE=1`` in the environment to force the numpy path.
"""

import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("GPMSYNC_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _pykernels
else:
    _impl = _pykernels

svd_batch = _impl.svd_batch
det_batch = _impl.det_batch
block_apply_csr = _impl.block_apply_csr

__all__ = ["BACKEND", "svd_batch", "det_batch", "block_apply_csr"]
