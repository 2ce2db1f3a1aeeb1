"""Select the candidate-scan kernel at import.

The compiled extension is used when it was built; set ``EEGCF_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

from eegcf import _kernels_py

if os.environ.get("EEGCF_PURE_PYTHON", "") not in ("", "0"):
    kernels = _kernels_py
    BACKEND = "python"
else:
    try:
        from eegcf import _kernels as kernels
        BACKEND = "cython"
    except ImportError:
        kernels = _kernels_py
        BACKEND = "python"


def available_backends():
    out = {"python": _kernels_py}
    try:
        from eegcf import _kernels
        out["cython"] = _kernels
    except ImportError:
        pass
    return out
