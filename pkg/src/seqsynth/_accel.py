"""Optional numba acceleration.

Set ``SEQSYNTH_DISABLE_NUMBA=1`` to force the pure-numpy kernels. The flag is
read once at import time; :func:`numba_enabled` reports the active path.
"""

import os

_DISABLED = os.environ.get("SEQSYNTH_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _DISABLED:
        raise ImportError("numba disabled by SEQSYNTH_DISABLE_NUMBA")
    from numba import njit  # noqa: F401

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]

        def wrap(fn):
            return fn

        return wrap


def numba_enabled():
    return HAVE_NUMBA
