"""Discrete empirical interpolation of the dG nonlinear term.

Each interpolation index is a single dG degree of freedom and therefore
belongs to exactly one element. Evaluating the sampled entries of ``F`` (or
rows of its Jacobian) only needs the reduced solution reconstructed on those
owner elements, so the online cost depends on ``n`` and ``k`` but not on the
mesh size.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la

from .dg import DGSpace, bistable, bistable_derivative
from .numerics import SingularMatrixError, spectral_norm, thin_svd
from .pod import RankError, numerical_rank, select_modes

__all__ = [
    "DeimRankError",
    "DeimOperator",
    "deim_basis",
    "deim_select",
    "deim_reconstruct",
    "build_deim_operator",
    "eval_nonlinear_deim",
    "deim_jacobian",
    "deim_error_bound",
]


class DeimRankError(ValueError):
    def __init__(self, column):
        super().__init__(f"DEIM residual vanishes for basis column {column}; columns are dependent")
        self.column = column


def deim_basis(snapshots: np.ndarray, modes: int | None = None, energy: float | None = None):
    """Leading left singular vectors of the nonlinear snapshots: ``(W, sigma)``."""
    if (modes is None) == (energy is None):
        raise ValueError("give exactly one of modes or energy")
    left, sigma, _ = thin_svd(snapshots, compute_right=False)
    n = modes if modes is not None else select_modes(sigma, energy)
    rank = numerical_rank(sigma, snapshots.shape)
    if n > rank:
        raise RankError(n, rank)
    return np.ascontiguousarray(left[:, :n]), sigma


def deim_select(W: np.ndarray) -> np.ndarray:
    """Greedy interpolation indices, one per column of ``W``.

    Column ``l`` is interpolated at the indices chosen so far and the next
    index is where the interpolation residual is largest.
    """
    W = np.atleast_2d(np.asarray(W, dtype=float))
    if W.shape[0] == 1 and W.shape[1] != 1:
        W = W.T
    N, n = W.shape
    scale = N * np.finfo(float).eps
    p = np.empty(n, dtype=np.int64)
    for l in range(n):
        r = W[:, l].copy()
        if l:
            c = la.solve(W[p[:l], :l], W[p[:l], l])
            r -= W[:, :l] @ c
        if np.max(np.abs(r)) <= scale * max(np.linalg.norm(W[:, l]), 1e-300):
            raise DeimRankError(l)
        p[l] = np.argmax(np.abs(r))
    return p


def deim_reconstruct(W: np.ndarray, p: np.ndarray, F: np.ndarray) -> np.ndarray:
    """``W (P^T W)^{-1} P^T F`` for one vector or a matrix of columns."""
    return W @ la.solve(W[p], F[p])


@dataclass
class OpCounter:
    """Floating-point operation tally of the online DEIM kernels."""

    flops: int = 0
    entries_touched: int = 0

    def reset(self):
        self.flops = 0
        self.entries_touched = 0


@dataclass
class DeimOperator:
    """Offline data for N-independent evaluation of the reduced nonlinearity.

    ``psi_local[s]`` holds the rows of ``Psi_u`` belonging to owner element
    ``elements[s]``; index ``i`` is local function ``local[i]`` on element
    slot ``slot[i]``.
    """

    indices: np.ndarray  # (n,)
    Q: np.ndarray  # (k, n)
    owner_elements: np.ndarray  # (n,) element id of each index
    elements: np.ndarray  # (m,) distinct owner elements
    slot: np.ndarray  # (n,)
    local: np.ndarray  # (n,)
    psi_local: np.ndarray  # (m, n_loc, k)
    dets: np.ndarray  # (m,)
    phi: np.ndarray  # (nq, n_loc) reference basis at quadrature points
    weights: np.ndarray  # (nq,)
    bound: float
    counter: OpCounter = field(default_factory=OpCounter, repr=False)

    @property
    def n(self) -> int:
        return len(self.indices)

    @property
    def k(self) -> int:
        return self.Q.shape[0]

    @property
    def n_loc(self) -> int:
        return self.phi.shape[1]


def build_deim_operator(psi_u: np.ndarray, W: np.ndarray, p: np.ndarray, space: DGSpace) -> DeimOperator:
    p = np.asarray(p, dtype=np.int64)
    PW = W[p]
    try:
        with warnings.catch_warnings():
            # singularity is reported below as an exception
            warnings.simplefilter("ignore", la.LinAlgWarning)
            lu = la.lu_factor(PW, check_finite=True)
    except la.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from None
    if np.any(np.abs(np.diag(lu[0])) <= np.finfo(float).eps * np.abs(PW).max() * len(p)):
        raise SingularMatrixError("P^T W is singular")
    # Q = Psi^T W (P^T W)^{-1}
    Q = la.lu_solve(lu, (psi_u.T @ W).T, trans=1).T

    owners = space.element_of(p)
    elements, slot = np.unique(owners, return_inverse=True)
    nl = space.n_loc
    psi_local = psi_u[space.dofs(elements).ravel()].reshape(len(elements), nl, -1)
    return DeimOperator(
        indices=p,
        Q=np.ascontiguousarray(Q),
        owner_elements=owners,
        elements=elements,
        slot=slot,
        local=space.local_of(p),
        psi_local=np.ascontiguousarray(psi_local),
        dets=space.mesh.dets[elements].copy(),
        phi=space.phi.copy(),
        weights=space.quad_weights.copy(),
        bound=deim_error_bound(W, p),
    )


def _local_values(op: DeimOperator, u_red: np.ndarray) -> np.ndarray:
    m, nl, k = op.psi_local.shape
    nq = len(op.weights)
    coeffs = op.psi_local @ u_red  # (m, nl)
    uq = coeffs @ op.phi.T  # (m, nq)
    op.counter.flops += 2 * m * nl * k + 2 * m * nq * nl
    return uq


def sampled_nonlinear(op: DeimOperator, u_red: np.ndarray, mu: float) -> np.ndarray:
    """The ``n`` entries ``P^T F(Psi_u u_red; mu)``."""
    uq = _local_values(op, u_red)
    m, nq = uq.shape
    fq = bistable(uq, mu)
    test = op.phi[:, op.local].T * op.weights  # (n, nq)
    rows = op.dets[op.slot] * np.einsum("iq,iq->i", test, fq[op.slot])
    op.counter.flops += 5 * m * nq + 2 * op.n * nq + 2 * op.n
    return rows


def eval_nonlinear_deim(op: DeimOperator, u_red: np.ndarray, mu: float) -> np.ndarray:
    """DEIM approximation of ``Psi_u^T F(Psi_u u_red; mu)``."""
    rows = sampled_nonlinear(op, u_red, mu)
    op.counter.flops += 2 * op.k * op.n
    return op.Q @ rows


def sampled_jacobian_rows(op: DeimOperator, u_red: np.ndarray, mu: float) -> np.ndarray:
    """Nonzero entries of ``P^T J_F``: row ``i`` only meets its owner element, ``(n, n_loc)``."""
    uq = _local_values(op, u_red)
    dfq = bistable_derivative(uq, mu)
    test = op.phi[:, op.local].T * op.weights  # (n, nq)
    entries = op.dets[op.slot, None] * np.einsum("iq,iq,qj->ij", test, dfq[op.slot], op.phi)
    m, nq = uq.shape
    op.counter.flops += 4 * m * nq + 2 * op.n * nq * (op.n_loc + 1) + op.n * op.n_loc
    op.counter.entries_touched += entries.size
    return entries


def deim_jacobian(op: DeimOperator, u_red: np.ndarray, mu: float) -> np.ndarray:
    """``Q (P^T J_F) Psi_u`` assembled from ``n * n_loc`` Jacobian entries."""
    entries = sampled_jacobian_rows(op, u_red, mu)
    if entries.size != op.n * op.n_loc:
        raise AssertionError(f"touched {entries.size} Jacobian entries, expected {op.n * op.n_loc}")
    rows = np.einsum("ij,ijk->ik", entries, op.psi_local[op.slot])  # (n, k)
    op.counter.flops += 2 * op.n * op.n_loc * op.k + 2 * op.k * op.n * op.k
    return op.Q @ rows


def deim_error_bound(W: np.ndarray, p: np.ndarray) -> float:
    """``||(P^T W)^{-1}||_2``, the amplification factor of the DEIM error bound."""
    PW = np.asarray(W)[np.asarray(p)]
    try:
        inv = la.inv(PW)
    except la.LinAlgError as exc:
        raise SingularMatrixError(str(exc)) from None
    return spectral_norm(inv)
