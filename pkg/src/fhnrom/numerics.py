"""Linear algebra used by the full and reduced solvers.

Dense arrays are numpy row-major (C order); sparse operators are
``scipy.sparse`` matrices, with block-sparse (BSR) storage for dG operators.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "NotPositiveDefiniteError",
    "SingularMatrixError",
    "CholeskyFactor",
    "cholesky",
    "thin_svd",
    "spectral_norm",
    "solve_sparse",
    "solve_dense",
]

# above this many entries, tall/wide SVDs go through the Gram matrix
GRAM_SVD_THRESHOLD = 20_000_000


class NotPositiveDefiniteError(np.linalg.LinAlgError):
    pass


class SingularMatrixError(np.linalg.LinAlgError):
    pass


@dataclass(frozen=True)
class CholeskyFactor:
    """Upper-triangular ``R`` with ``M = R^T R``.

    For block-diagonal ``M`` the factor is block diagonal too and is kept as
    the stack of dense blocks, so applying ``R`` or ``R^{-1}`` is O(N).
    """

    blocks: np.ndarray | None  # (nb, b, b) upper-triangular blocks
    dense: np.ndarray | None = None

    @property
    def R(self):
        if self.blocks is None:
            return self.dense
        nb = len(self.blocks)
        b = self.blocks.shape[1]
        return sp.bsr_matrix((self.blocks, np.arange(nb), np.arange(nb + 1)), shape=(nb * b, nb * b))

    def apply(self, x: np.ndarray) -> np.ndarray:
        """``R @ x`` for a vector or a matrix of columns."""
        if self.blocks is None:
            return self.dense @ x
        nb, b, _ = self.blocks.shape
        xs = x.reshape(nb, b, -1)
        return np.einsum("eij,ejk->eik", self.blocks, xs).reshape(x.shape)

    def solve(self, y: np.ndarray) -> np.ndarray:
        """``R^{-1} @ y``."""
        if self.blocks is None:
            return la.solve_triangular(self.dense, y, lower=False)
        nb, b, _ = self.blocks.shape
        ys = y.reshape(nb, b, -1)
        out = np.linalg.solve(self.blocks, ys)
        return out.reshape(y.shape)


def _dense_cholesky(a: np.ndarray) -> np.ndarray:
    try:
        return la.cholesky(a, lower=False)
    except la.LinAlgError as exc:
        raise NotPositiveDefiniteError(str(exc)) from None


def _symmetric(a, at) -> bool:
    return bool(np.all(np.abs(a - at) <= 1e-12 * max(np.abs(a).max(initial=0.0), 1e-300)))


def cholesky(M) -> CholeskyFactor:
    """Cholesky factor of a symmetric positive definite matrix.

    Block-diagonal BSR input is factorised block by block and never
    touches off-diagonal storage.
    """
    if sp.issparse(M) and M.format == "bsr":
        b = M.blocksize[0]
        nb = M.shape[0] // b
        rows = np.repeat(np.arange(nb), np.diff(M.indptr))
        if np.all(M.indices == rows) and len(M.indices) == nb:
            blocks = M.data
            if not _symmetric(blocks, blocks.transpose(0, 2, 1)):
                raise NotPositiveDefiniteError("matrix is not symmetric")
            try:
                factor = np.linalg.cholesky(blocks)
            except np.linalg.LinAlgError as exc:
                raise NotPositiveDefiniteError(str(exc)) from None
            return CholeskyFactor(blocks=np.ascontiguousarray(factor.transpose(0, 2, 1)))
    dense = M.toarray() if sp.issparse(M) else np.asarray(M, dtype=float)
    if not _symmetric(dense, dense.T):
        raise NotPositiveDefiniteError("matrix is not symmetric")
    return CholeskyFactor(blocks=None, dense=_dense_cholesky(dense))


def _rank_tol(s: np.ndarray, shape) -> float:
    return s[0] * max(shape) * np.finfo(float).eps if s.size else 0.0


def thin_svd(A: np.ndarray, method: str = "auto", compute_right: bool = True):
    """Thin SVD ``A = U diag(s) Vt`` with ``s`` nonincreasing.

    ``method="gram"`` eigendecomposes the smaller of ``A A^T`` and ``A^T A``
    (method of snapshots); it saves memory on large snapshot matrices but
    loses relative accuracy for singular values below ``sqrt(eps) * s[0]``.
    ``"auto"`` only uses it above ``GRAM_SVD_THRESHOLD`` entries.
    """
    A = np.asarray(A, dtype=float)
    if method == "auto":
        method = "gram" if A.size > GRAM_SVD_THRESHOLD else "direct"
    if method == "direct":
        U, s, Vt = la.svd(A, full_matrices=False, lapack_driver="gesdd")
        return (U, s, Vt) if compute_right else (U, s, None)
    if method != "gram":
        raise ValueError(f"unknown SVD method {method!r}")

    rows, cols = A.shape
    if rows <= cols:
        lam, U = la.eigh(A @ A.T)
        lam, U = lam[::-1], U[:, ::-1]
        s = np.sqrt(np.clip(lam, 0.0, None))
        Vt = None
        if compute_right:
            Vt = np.zeros((rows, cols))
            pos = s > _rank_tol(s, A.shape)
            Vt[pos] = (U[:, pos].T @ A) / s[pos, None]
        return U, s, Vt
    lam, V = la.eigh(A.T @ A)
    lam, V = lam[::-1], V[:, ::-1]
    s = np.sqrt(np.clip(lam, 0.0, None))
    U = np.zeros((rows, cols))
    pos = s > _rank_tol(s, A.shape)
    U[:, pos] = (A @ V[:, pos]) / s[pos]
    return U, s, (V.T if compute_right else None)


def spectral_norm(A: np.ndarray) -> float:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    return float(la.svdvals(A)[0]) if A.size else 0.0


def solve_sparse(A, b: np.ndarray) -> np.ndarray:
    """Direct sparse solve via SuperLU; raises ``SingularMatrixError``."""
    b = np.asarray(b, dtype=float)
    if not np.any(b):
        return np.zeros_like(b)
    try:
        lu = spla.splu(sp.csc_matrix(A))
    except RuntimeError as exc:
        raise SingularMatrixError(str(exc)) from None
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("non-finite solution")
    return x


def solve_dense(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            x = la.solve(A, b)
    except la.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from None
    # scipy's diagonal shortcut divides by zero instead of raising
    if not np.all(np.isfinite(x)):
        raise SingularMatrixError("non-finite solution")
    return x
