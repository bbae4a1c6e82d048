"""Kernel backend selection.

The compiled extension is used when it was built; set ``OODKIT_PURE_PYTHON=1``
to force the numpy fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
knn = _kernels_py.knn
pair_counts = _kernels_py.pair_counts

if os.environ.get("OODKIT_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels_c
    except ImportError:  # extension not built
        _kernels_c = None
    else:
        BACKEND = "cython"
        knn = _kernels_c.knn
        pair_counts = _kernels_c.pair_counts
else:
    _kernels_c = None


def available_backends() -> dict:
    out = {"python": _kernels_py}
    try:
        from . import _kernels_c as compiled
    except ImportError:
        pass
    else:
        out["cython"] = compiled
    return out
