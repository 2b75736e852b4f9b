"""Backend selection for the hot numeric kernels.

The CSR matvec and element-matrix scatter are the two kernels that
dominate solve time. Both have a numba ``@njit`` implementation and a
pure-numpy fallback. Selection happens once at import:

* ``GRADFEM_NUMBA=0`` forces the numpy path,
* otherwise numba is used when it imports cleanly.

Both paths sum contributions in the same fixed order, so results agree
across backends to the last few ulps and are bit-identical across
thread counts (rows/slots are independent under ``prange``).
"""

import os
import warnings

_env = os.environ.get("GRADFEM_NUMBA", "1").strip().lower()
_want_numba = _env not in ("0", "false", "no", "off")

HAS_NUMBA = False
if _want_numba:
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            import numba  # noqa: F401

        # Threading-layer fallback notices (e.g. an old TBB) are not
        # actionable here; numba silently picks a working layer.
        warnings.filterwarnings("ignore", category=numba.NumbaWarning)
        HAS_NUMBA = True
    except ImportError:
        HAS_NUMBA = False


def backend_name() -> str:
    return "numba" if HAS_NUMBA else "numpy"


def set_num_threads(n: int) -> None:
    """Set the worker count for parallel kernels (no-op on the numpy path)."""
    if n < 1:
        raise ValueError(f"thread count must be >= 1, got {n}")
    if HAS_NUMBA:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
