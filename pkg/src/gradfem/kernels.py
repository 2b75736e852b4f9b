"""Hot numeric kernels: CSR matvec and element-block scatter.

Each kernel has a numba and a numpy implementation; `backend` picks one
at import time. Accumulation order is fixed (ascending storage order)
in both, which keeps assembly and matvec deterministic for any thread
count: the numba matvec parallelizes only over independent rows, and
the scatter is sequential.
"""

import numpy as np

from .backend import HAS_NUMBA

if HAS_NUMBA:
    import warnings

    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from numba import njit, prange

    @njit(parallel=True, cache=True)
    def _csr_matvec_nb(indptr, indices, data, x, out):
        n = indptr.shape[0] - 1
        for i in prange(n):
            acc = 0.0
            for k in range(indptr[i], indptr[i + 1]):
                acc += data[k] * x[indices[k]]
            out[i] = acc

    @njit(cache=True)
    def _scatter_add_nb(values, dest, contribs):
        # Sequential on purpose: one fixed accumulation order.
        for k in range(dest.shape[0]):
            values[dest[k]] += contribs[k]


def csr_matvec(indptr, indices, data, x):
    """y = A @ x for a CSR matrix given by (indptr, indices, data)."""
    out = np.empty(indptr.shape[0] - 1, dtype=np.float64)
    if HAS_NUMBA:
        _csr_matvec_nb(indptr, indices, data, x, out)
    else:
        # Every row of an assembled matrix holds its diagonal, so no
        # segment is empty and reduceat is safe.
        prod = data * x[indices]
        out[:] = np.add.reduceat(prod, indptr[:-1])
    return out


def scatter_add(values, dest, contribs):
    """values[dest[k]] += contribs[k], accumulated in ascending k."""
    if HAS_NUMBA:
        _scatter_add_nb(values, dest, contribs)
    else:
        np.add.at(values, dest, contribs)
