"""Kernel backend selection: numba-jitted hot loops with a pure-numpy fallback.

The environment variable ``CHOREO8_BACKEND`` selects the path:

* ``numba`` (default) -- compile the kernels in :mod:`choreo8.kernels` with
  ``numba.njit(cache=True)``.  Falls back to numpy with a warning if numba
  is not importable.
* ``numpy`` -- run the same kernel source as plain Python/numpy.  Slower,
  but dependency-free and bit-for-bit comparable in tests and benchmarks.
"""
import os
import warnings

_requested = os.environ.get("CHOREO8_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise RuntimeError(
        f"CHOREO8_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

USING_NUMBA = False
if _requested == "numba":
    try:
        import numba  # noqa: F401
        USING_NUMBA = True
    except ImportError:  # pragma: no cover - exercised via CHOREO8_BACKEND=numpy
        warnings.warn("numba not importable; falling back to numpy kernels",
                      RuntimeWarning, stacklevel=2)

BACKEND = "numba" if USING_NUMBA else "numpy"


def maybe_njit(func=None, **kwargs):
    """Decorate with ``numba.njit`` on the numba path, identity otherwise."""
    def wrap(f):
        if USING_NUMBA:
            import numba
            opts = {"cache": True, "fastmath": False}
            opts.update(kwargs)
            return numba.njit(**opts)(f)
        return f
    if func is not None:
        return wrap(func)
    return wrap
