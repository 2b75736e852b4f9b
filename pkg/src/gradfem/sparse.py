"""Compressed sparse row matrices sized for assembled Jacobians.

The sparsity pattern is fixed by mesh connectivity (two DOFs couple
iff their nodes share a cell) and reused across Newton iterations;
assembly only rewrites `data`.
"""

from dataclasses import dataclass

import numpy as np

from .kernels import csr_matvec


@dataclass
class CsrMatrix:
    """CSR storage; column indices sorted and unique within each row."""

    indptr: np.ndarray  # (N+1,) int32
    indices: np.ndarray  # (nnz,) int32
    data: np.ndarray  # (nnz,) float64

    @property
    def shape(self):
        n = self.indptr.shape[0] - 1
        return (n, n)

    @property
    def nnz(self) -> int:
        return int(self.indices.shape[0])

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return csr_matvec(self.indptr, self.indices, self.data, np.asarray(x, dtype=np.float64))

    def __matmul__(self, x):
        return self.matvec(x)

    def row_keys(self) -> np.ndarray:
        """Globally sorted (row, col) slot keys: row * N + col."""
        n = self.shape[0]
        rows = np.repeat(np.arange(n, dtype=np.int64), np.diff(self.indptr))
        return rows * n + self.indices

    def diagonal(self) -> np.ndarray:
        n = self.shape[0]
        keys = self.row_keys()
        pos = np.searchsorted(keys, np.arange(n, dtype=np.int64) * (n + 1))
        out = np.zeros(n)
        ok = (pos < self.nnz) & (keys[np.minimum(pos, self.nnz - 1)] == np.arange(n, dtype=np.int64) * (n + 1))
        out[ok] = self.data[pos[ok]]
        return out

    def transpose(self) -> "CsrMatrix":
        """Explicit transpose (stable sort by column); O(nnz log nnz)."""
        n = self.shape[0]
        indptr_t = np.zeros(n + 1, dtype=np.int32)
        np.cumsum(np.bincount(self.indices, minlength=n), out=indptr_t[1:])
        rows = np.repeat(np.arange(n, dtype=np.int32), np.diff(self.indptr))
        # Within a column, rows stay ascending under a stable sort,
        # which yields sorted indices in the transpose.
        order = np.argsort(self.indices, kind="stable")
        return CsrMatrix(indptr=indptr_t, indices=rows[order], data=self.data[order])

    def todense(self) -> np.ndarray:
        n = self.shape[0]
        out = np.zeros((n, n))
        rows = np.repeat(np.arange(n), np.diff(self.indptr))
        out[rows, self.indices] = self.data
        return out

    def copy_structure(self) -> "CsrMatrix":
        return CsrMatrix(self.indptr, self.indices, np.zeros_like(self.data))


def pattern_from_cells(cells: np.ndarray, n_nodes: int, vec: int):
    """CSR pattern for DOF coupling plus the element scatter map.

    Returns (indptr, indices, dest) where dest[e, a, b] is the storage
    slot of element e's local (a, b) DOF pair, with nd = 8*vec local
    DOFs ordered node-major.
    """
    n_e = cells.shape[0]
    nd = 8 * vec
    n = n_nodes * vec

    # Unique node-node pairs from shared cells.
    a = np.repeat(cells, 8, axis=1).ravel()  # (N_e*64,)
    b = np.tile(cells, (1, 8)).ravel()
    pair_keys = np.unique(a.astype(np.int64) * n_nodes + b)
    rows_n = pair_keys // n_nodes
    cols_n = pair_keys % n_nodes

    # Expand each node pair to a vec x vec block of DOF pairs.
    comp = np.arange(vec, dtype=np.int64)
    rows = rows_n[:, None, None] * vec + comp[None, :, None]  # (P, vec, 1)
    cols = cols_n[:, None, None] * vec + comp[None, None, :]  # (P, 1, vec)
    keys = np.sort((rows * n + cols).ravel())

    indptr = np.zeros(n + 1, dtype=np.int32)
    np.cumsum(np.bincount(keys // n, minlength=n), out=indptr[1:])
    indices = (keys % n).astype(np.int32)

    # Scatter map: slot of (gdof_row, gdof_col) per element-local pair.
    gdofs = (cells[:, :, None].astype(np.int64) * vec + comp).reshape(n_e, nd)
    grow = np.repeat(gdofs, nd, axis=1).ravel()
    gcol = np.tile(gdofs, (1, nd)).ravel()
    dest = np.searchsorted(keys, grow * n + gcol)
    return indptr, indices, dest.reshape(n_e, nd, nd)
