"""Optional numba acceleration for the hot numeric kernels.

The time-domain integrator is the only part of the package whose inner loop
is hot enough to matter.  Its kernels are written so that they run unchanged
either under ``numba.njit`` or as plain numpy/python.  Set the environment
variable ``RESPA_NO_NUMBA=1`` (before import) to force the pure-python path,
e.g. for debugging or on platforms without numba.

``benchmarks/bench_timedomain.py`` compares the two paths.
"""

import os

NUMBA_DISABLED = os.environ.get("RESPA_NO_NUMBA", "0") not in ("", "0", "false", "False")

if not NUMBA_DISABLED:
    try:
        import numba as _nb
    except ImportError:
        _nb = None
        NUMBA_DISABLED = True
else:
    _nb = None

USING_NUMBA = not NUMBA_DISABLED


def njit(*args, **kwargs):
    """``numba.njit`` when available and enabled, identity decorator otherwise."""
    if USING_NUMBA:
        return _nb.njit(*args, **kwargs)
    if args and callable(args[0]) and not kwargs:
        return args[0]

    def wrap(func):
        return func

    return wrap
