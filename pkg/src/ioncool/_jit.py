"""Optional numba acceleration.

Set ``IONCOOL_DISABLE_NUMBA=1`` to run every kernel as plain Python on
numpy arrays. Results are identical up to floating-point reassociation;
the fallback is roughly two orders of magnitude slower.
"""
import os

_FLAG = os.environ.get("IONCOOL_DISABLE_NUMBA", "").strip().lower()
NUMBA_DISABLED = _FLAG not in ("", "0", "false", "no")

try:
    import numba
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    numba = None
    NUMBA_DISABLED = True

NUMBA_ENABLED = not NUMBA_DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when acceleration is on, identity decorator otherwise."""
    if NUMBA_ENABLED:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(func):
        return func

    return wrap
