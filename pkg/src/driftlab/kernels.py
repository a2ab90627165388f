"""Kernel backend selection.

The compiled extension is used when it was built; otherwise the numpy
fallback is loaded. Setting ``DRIFTLAB_PURE_PYTHON=1`` forces the fallback.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if not os.environ.get("DRIFTLAB_PURE_PYTHON"):
    try:
        from . import _kernels as _compiled
    except ImportError:  # extension not built
        pass
    else:
        _impl = _compiled
        BACKEND = "cython"

ks_statistic = _impl.ks_statistic
sorted_replace = _impl.sorted_replace
hellinger_per_feature = _impl.hellinger_per_feature
hellinger_mean = _impl.hellinger_mean
