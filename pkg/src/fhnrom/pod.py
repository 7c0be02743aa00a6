"""Mass-weighted POD bases and Galerkin-reduced operators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .numerics import CholeskyFactor, thin_svd

__all__ = [
    "RankError",
    "PodBasis",
    "ReducedBasis",
    "RomOperators",
    "select_modes",
    "numerical_rank",
    "weighted_svd",
    "compute_pod_basis",
    "reduce_operators",
]


class RankError(ValueError):
    def __init__(self, requested, rank):
        super().__init__(f"requested {requested} modes but the snapshots only have rank {rank}")
        self.requested = requested
        self.rank = rank


def numerical_rank(singular_values: np.ndarray, shape) -> int:
    s = np.asarray(singular_values)
    if not s.size or s[0] == 0:
        return 0
    return int(np.sum(s > s[0] * max(shape) * np.finfo(float).eps))


def select_modes(singular_values: np.ndarray, energy: float) -> int:
    """Smallest ``k`` whose leading squared singular values hold ``energy`` of the total."""
    if not 0 < energy <= 1:
        raise ValueError("energy fraction must lie in (0, 1]")
    s2 = np.asarray(singular_values, dtype=float) ** 2
    total = s2.sum()
    if total == 0:
        return 0
    cumulative = np.cumsum(s2) / total
    # energy 1 is reached up to roundoff only
    return int(min(np.searchsorted(cumulative, energy - 1e-14) + 1, len(s2)))


@dataclass
class PodBasis:
    modes: np.ndarray  # (N, k), M-orthonormal columns
    singular_values: np.ndarray  # full spectrum

    @property
    def k(self) -> int:
        return self.modes.shape[1]

    def truncate(self, k: int) -> "PodBasis":
        return PodBasis(self.modes[:, :k], self.singular_values)


@dataclass
class ReducedBasis:
    psi_u: np.ndarray
    psi_v: np.ndarray
    sigma_u: np.ndarray
    sigma_v: np.ndarray

    @property
    def k(self) -> int:
        return self.psi_u.shape[1]


def weighted_svd(snapshots: np.ndarray, chol: CholeskyFactor, svd_method: str = "auto"):
    """Left singular vectors and spectrum of ``R @ snapshots`` plus its numerical rank."""
    snapshots = np.asarray(snapshots, dtype=float)
    if snapshots.ndim == 1:
        snapshots = snapshots[:, None]
    if snapshots.shape[1] < 1:
        raise ValueError("no snapshots")
    weighted = chol.apply(snapshots)
    left, sigma, _ = thin_svd(weighted, method=svd_method, compute_right=False)
    return left, sigma, numerical_rank(sigma, weighted.shape)


def compute_pod_basis(snapshots: np.ndarray, chol: CholeskyFactor, modes: int | None = None,
                      energy: float | None = None, svd_method: str = "auto") -> PodBasis:
    """POD basis of ``snapshots`` that is orthonormal in the ``M`` inner product.

    With ``M = R^T R``, the left singular vectors of ``R @ snapshots`` are
    mapped back through ``R^{-1}``. Give exactly one of ``modes`` (a count)
    or ``energy`` (retained fraction of the squared singular values).
    """
    if (modes is None) == (energy is None):
        raise ValueError("give exactly one of modes or energy")
    left, sigma, rank = weighted_svd(snapshots, chol, svd_method)
    k = modes if modes is not None else select_modes(sigma, energy)
    if k > rank:
        raise RankError(k, rank)
    return PodBasis(chol.solve(np.ascontiguousarray(left[:, :k])), sigma)


@dataclass
class RomOperators:
    """Reduced matrices of the projected system.

    ``M_u = Psi_u^T M Psi_v`` couples ``v`` into the ``u`` equation and
    ``M_v = Psi_v^T M Psi_u`` couples ``u`` into the ``v`` equation.
    """

    S_u: np.ndarray
    S_v: np.ndarray
    M_u: np.ndarray
    M_v: np.ndarray
    alpha: float
    beta: float

    @property
    def k(self) -> int:
        return self.S_u.shape[0]


def reduce_operators(psi_u, psi_v, M, S_u, S_v, alpha, beta, orthonormality_tol=1e-8) -> RomOperators:
    if psi_u.shape != psi_v.shape or psi_u.shape[0] != M.shape[0]:
        raise ValueError(f"basis shapes {psi_u.shape}, {psi_v.shape} do not match N={M.shape[0]}")
    k = psi_u.shape[1]
    for name, psi in [("psi_u", psi_u), ("psi_v", psi_v)]:
        gram = psi.T @ (M @ psi)
        err = np.abs(gram - np.eye(k)).max() if k else 0.0
        if err > orthonormality_tol:
            raise ValueError(f"{name} is not M-orthonormal (max deviation {err:.2e})")
    return RomOperators(
        S_u=psi_u.T @ (S_u @ psi_u),
        S_v=psi_v.T @ (S_v @ psi_v),
        M_u=psi_u.T @ (M @ psi_v),
        M_v=psi_v.T @ (M @ psi_u),
        alpha=alpha,
        beta=beta,
    )
