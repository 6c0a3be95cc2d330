"""Backend switch for the hot kernels.

Kernels are compiled with numba when it is importable, unless the environment
variable ``MPML_NO_NUMBA`` is set to a truthy value, in which case the
vectorised numpy implementations are used instead. The flag is read once at
import time.
"""

from __future__ import annotations

import os

_flag = os.environ.get("MPML_NO_NUMBA", "").strip().lower()
_disabled = _flag not in ("", "0", "false", "no")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False
    _njit = None


def njit(func):
    """Compile ``func`` in nopython mode, or return it untouched."""
    if HAVE_NUMBA:
        return _njit(cache=True, nogil=True)(func)
    return func


def backend() -> str:
    return "numba" if HAVE_NUMBA else "numpy"
