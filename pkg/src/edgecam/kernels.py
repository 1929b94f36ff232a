"""Backend selection for the hot loops.

The compiled extension is used when it imports; set ``EDGECAM_BACKEND=python``
to force the pure-Python reference.
"""
import os

from . import _kernels_py

if os.environ.get("EDGECAM_BACKEND", "").lower() == "python":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # pragma: no cover - depends on build
        _impl = _kernels_py

BACKEND = _impl.BACKEND
run_epoch = _impl.run_epoch
mlp_forward = _impl.mlp_forward
dqn_train_step = _impl.dqn_train_step


def compiled_available() -> bool:
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True
