"""Kernel selection.  The compiled module is used when it was built and
TNLS_PURE_PYTHON is unset; otherwise the numpy version."""
import os

from . import _kernels_py

BACKEND = "python"
cn_step = _kernels_py.cn_step

if not os.environ.get("TNLS_PURE_PYTHON"):
    try:
        from . import _kernels
    except ImportError:
        pass
    else:
        cn_step = _kernels.cn_step
        BACKEND = "cython"
