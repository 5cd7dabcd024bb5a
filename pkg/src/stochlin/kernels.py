"""Kernel backend selection.

The compiled Cython module is used when it was built; otherwise the numpy
fallback is imported. Set ``STOCHLIN_BACKEND=python`` to force the fallback.
"""

import os

from . import _kernels_py

if os.environ.get("STOCHLIN_BACKEND", "").lower() == "python":
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl
    except ImportError:  # extension not built
        _impl = _kernels_py

BACKEND = _impl.BACKEND
philox4x32 = _impl.philox4x32
philox_normals = _impl.philox_normals
gagliardo_lag_sums = _impl.gagliardo_lag_sums


def compiled_available():
    try:
        from . import _kernels  # noqa: F401
    except ImportError:
        return False
    return True
