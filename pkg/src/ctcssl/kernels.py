"""Hot-loop kernels: compiled Cython build when available, numpy otherwise.

Set ``CTCSSL_PURE_PYTHON=1`` to force the numpy versions.
"""
from __future__ import annotations

import os

from . import _kernels_slow as slow

fast = None
if os.environ.get("CTCSSL_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels_fast as fast
    except ImportError:  # extension not built
        fast = None

_impl = fast if fast is not None else slow
BACKEND = "cython" if fast is not None else "numpy"

ctc_forward = _impl.ctc_forward
ctc_occupancy = _impl.ctc_occupancy
edit_counts = _impl.edit_counts
