"""Pick the compiled kernels when available; ``CAVITYWALK_PURE_PYTHON=1`` forces numpy."""

import os

from . import _pykernels

BACKEND = "python"
kernels = _pykernels

if os.environ.get("CAVITYWALK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled
    except ImportError:
        pass
    else:
        kernels = _compiled
        BACKEND = "cython"

first_detections = kernels.first_detections
window_sums = kernels.window_sums
