"""Optional numba acceleration.

Set ``MPFEST_DISABLE_NUMBA=1`` before import to run every kernel as plain
Python/numpy. The flag is read once, at import time.
"""

import os
from typing import Any, Callable

DISABLED = os.environ.get("MPFEST_DISABLE_NUMBA", "").strip().lower() in (
    "1",
    "true",
    "yes",
    "on",
)

try:
    if DISABLED:
        raise ImportError("numba disabled by MPFEST_DISABLE_NUMBA")
    from numba import njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args: Any, **kwargs: Any) -> Callable:
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


def py_func(f: Callable) -> Callable:
    """Return the interpreted version of a possibly-jitted kernel."""
    return getattr(f, "py_func", f)
