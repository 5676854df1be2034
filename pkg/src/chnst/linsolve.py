"""Sparse matrix assembly and direct solves for the Newton systems.

CSR storage and the LU factorization come from scipy (SuperLU with a COLAMD
column ordering, which is deterministic).  This module adds a fixed-pattern
assembler, residual checking with iterative refinement, and explicit failures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla


class SingularMatrixError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class PatternAssembler:
    """Assemble COO triplets with a fixed sparsity pattern into CSR quickly.

    The pattern is computed once; later calls only sum values into the stored
    slots, so repeated Jacobian assembly avoids re-sorting indices.
    """

    def __init__(self, rows: np.ndarray, cols: np.ndarray, shape: tuple[int, int]):
        rows = np.asarray(rows, dtype=np.int64)
        cols = np.asarray(cols, dtype=np.int64)
        key = rows * shape[1] + cols
        uniq, slot = np.unique(key, return_inverse=True)
        self.shape = shape
        self.slot = slot
        self.indices = (uniq % shape[1]).astype(np.int32)
        counts = np.bincount(uniq // shape[1], minlength=shape[0])
        self.indptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int32)
        self.nnz = uniq.size

    def assemble(self, values: np.ndarray) -> sp.csr_matrix:
        data = np.bincount(self.slot, weights=np.asarray(values).ravel(), minlength=self.nnz)
        return sp.csr_matrix((data, self.indices.copy(), self.indptr.copy()), shape=self.shape)


@dataclass
class SolveInfo:
    relative_residual: float
    refinements: int


def solve(
    A,
    b: np.ndarray,
    rtol: float = 1e-12,
    max_refine: int = 5,
    ordering: np.ndarray | None = None,
    pivot_threshold: float = 1.0,
) -> tuple[np.ndarray, SolveInfo]:
    """Solve ``A x = b`` by sparse LU, refining iteratively until ``rtol``.

    Without ``ordering`` SuperLU picks a COLAMD column order.  With an
    ``ordering`` (a permutation applied symmetrically to rows and columns) the
    matrix is factored in that order, and a small ``pivot_threshold`` lets
    SuperLU keep diagonal pivots so the fill follows the given order.
    """
    A = sp.csr_matrix(A)
    n, m = A.shape
    if n != m:
        raise ValueError(f"matrix must be square, got {A.shape}")
    b = np.asarray(b, dtype=float)
    if ordering is not None:
        Ap = A[ordering][:, ordering].tocsc()
        spec = "NATURAL"
    else:
        Ap = A.tocsc()
        spec = "COLAMD"
    try:
        lu = spla.splu(Ap, permc_spec=spec, diag_pivot_thresh=pivot_threshold)
    except RuntimeError as exc:
        raise SingularMatrixError(f"sparse LU failed: {exc}", {"shape": A.shape, "nnz": A.nnz}) from exc
    udiag = np.abs(lu.U.diagonal())
    if udiag.size and (udiag.min() == 0 or udiag.min() < 1e-14 * udiag.max()):
        raise SingularMatrixError(
            "matrix is numerically rank deficient",
            {"min_pivot": float(udiag.min()), "max_pivot": float(udiag.max()),
             "pivot_index": int(np.argmin(udiag))},
        )

    if ordering is not None:
        inv = np.empty_like(ordering)
        inv[ordering] = np.arange(ordering.size)

        def lu_solve(rhs):
            return lu.solve(rhs[ordering])[inv]
    else:
        lu_solve = lu.solve

    x = lu_solve(b)
    bnorm = np.linalg.norm(b)
    if bnorm == 0:
        return x, SolveInfo(0.0, 0)
    r = b - A @ x
    rel = np.linalg.norm(r) / bnorm
    k = 0
    while rel > rtol and k < max_refine:
        x = x + lu_solve(r)
        r = b - A @ x
        rel = np.linalg.norm(r) / bnorm
        k += 1
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("solution is not finite", {"min_pivot": float(udiag.min())})
    return x, SolveInfo(float(rel), k)
