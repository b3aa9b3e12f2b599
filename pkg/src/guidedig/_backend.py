"""Kernel backend selection.

Hot loops are written twice: a numba ``@njit`` version and a vectorised
numpy version. ``GUIDEDIG_NUMBA=0`` (or a missing numba install) selects the
numpy path at import time.
"""
import os

_flag = os.environ.get("GUIDEDIG_NUMBA", "1").strip().lower()
_requested = _flag not in ("0", "false", "no", "off")

try:
    import numba as _numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    _numba = None

HAVE_NUMBA = _numba is not None
USE_NUMBA = HAVE_NUMBA and _requested


def njit(*args, **kwargs):
    """``numba.njit`` when numba is importable, else a no-op decorator.

    Compilation is lazy, so decorating costs nothing when the numpy path is
    selected.
    """
    if _numba is None:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f
    kwargs.setdefault("cache", True)
    return _numba.njit(*args, **kwargs)


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
