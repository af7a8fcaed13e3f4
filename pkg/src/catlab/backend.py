"""Kernel backend selection.

The compiled extension is preferred when it imports cleanly; setting
CATLAB_PURE_PYTHON=1 forces the numpy fallback. Both backends expose the
same functions and agree to floating-point noise (summation order differs,
so results are close but not bit-identical across backends).
"""
import os

from . import kernels_py

if os.environ.get("CATLAB_PURE_PYTHON") == "1":
    _impl = kernels_py
else:
    try:
        from . import _core as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = kernels_py

BACKEND = _impl.BACKEND_NAME
PROB_EPS = kernels_py.PROB_EPS

sigmoid = kernels_py.sigmoid
bce = kernels_py.bce

irt_predict = _impl.irt_predict
irt_loss_grad = _impl.irt_loss_grad
irt_inner = _impl.irt_inner
ncdm_predict = _impl.ncdm_predict
ncdm_loss_grad = _impl.ncdm_loss_grad
ncdm_inner = _impl.ncdm_inner
