"""Backward-Euler/Newton integration of the semi-discrete FitzHugh-Nagumo system.

The coupled system for the activator ``u`` and inhibitor ``v`` is

    M u' + S_u u + alpha M (v - u) + F(u; mu) = 0
    M v' + S_v v + beta  M (v - u)            = 0

and every implicit step is solved by Newton's method on all ``2N`` unknowns.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .dg import (
    DGSpace,
    assemble_mass,
    assemble_nonlinear,
    assemble_nonlinear_jacobian,
    assemble_stiffness_sipg,
)

__all__ = [
    "NewtonError",
    "FomOperators",
    "build_fom_operators",
    "Trajectory",
    "fom_residual",
    "fom_step",
    "fom_solve",
    "random_initial_condition",
]

logger = logging.getLogger(__name__)


# residuals within this many ulps of |M x| / dt are treated as converged
ROUNDOFF_FACTOR = 64


class NewtonError(RuntimeError):
    """Newton's method did not reach the tolerance."""

    def __init__(self, message, residuals, time=None):
        super().__init__(message)
        self.residuals = list(residuals)
        self.time = time


@dataclass
class FomOperators:
    space: DGSpace
    M: sp.spmatrix
    S_u: sp.spmatrix
    S_v: sp.spmatrix
    alpha: float
    beta: float
    D_u: float
    D_v: float
    mu: float
    _pattern: dict = field(default_factory=dict, repr=False)

    @property
    def N(self) -> int:
        return self.space.N

    def with_mu(self, mu: float) -> "FomOperators":
        """Same discretisation at another parameter value; matrices are shared."""
        return FomOperators(self.space, self.M, self.S_u, self.S_v, self.alpha, self.beta,
                            self.D_u, self.D_v, mu, self._pattern)

    def nonlinear(self, u):
        return assemble_nonlinear(self.space, u, self.mu)

    def jacobian_pattern(self, dt: float) -> "_JacobianPattern":
        if dt not in self._pattern:
            self._pattern[dt] = _JacobianPattern(self, dt)
        return self._pattern[dt]


def build_fom_operators(space: DGSpace, D_u=0.04, D_v=1.0, alpha=0.3, beta=1.0, mu=0.0,
                        penalty=10.0) -> FomOperators:
    if alpha <= 0 or beta <= 0:
        raise ValueError("alpha and beta must be positive")
    M = assemble_mass(space)
    S_u = assemble_stiffness_sipg(space, D_u, penalty)
    S_v = assemble_stiffness_sipg(space, D_v, penalty)
    return FomOperators(space, M, S_u, S_v, alpha, beta, D_u, D_v, mu)


class _JacobianPattern:
    """Constant linear part of the Newton matrix in CSC form.

    The nonlinear Jacobian only adds to the diagonal element blocks of the
    ``u``-``u`` block, which are already structurally present, so each Newton
    iteration only updates those positions of the data array.
    """

    def __init__(self, ops: FomOperators, dt: float):
        M, a, b = ops.M, ops.alpha, ops.beta
        A = sp.bmat(
            [[M / dt + ops.S_u - a * M, a * M], [-b * M, M / dt + ops.S_v + b * M]],
            format="csc",
        )
        A.sort_indices()
        self.matrix = A
        n2 = A.shape[0]
        cols = np.repeat(np.arange(n2), np.diff(A.indptr))
        keys = cols.astype(np.int64) * n2 + A.indices

        space = ops.space
        nl = space.n_loc
        dof = space.dofs(np.arange(space.n_elements))
        r = np.repeat(dof[:, :, None], nl, axis=2)
        c = np.repeat(dof[:, None, :], nl, axis=1)
        jkeys = (c.astype(np.int64) * n2 + r).ravel()
        self.positions = np.searchsorted(keys, jkeys)
        if not np.array_equal(keys[self.positions], jkeys):
            raise RuntimeError("Jacobian pattern not contained in linear operator")

    def factorize(self, jf_blocks: np.ndarray):
        data = self.matrix.data.copy()
        data[self.positions] += jf_blocks.ravel()
        A = sp.csc_matrix((data, self.matrix.indices, self.matrix.indptr), shape=self.matrix.shape)
        return spla.splu(A)


def fom_residual(ops: FomOperators, u, v, u_n, v_n, dt):
    """Backward-Euler residual of both equations, stacked."""
    M = ops.M
    Mu, Mv = M @ u, M @ v
    ru = (Mu - M @ u_n) / dt + ops.S_u @ u + ops.alpha * (Mv - Mu) + ops.nonlinear(u)
    rv = (Mv - M @ v_n) / dt + ops.S_v @ v + ops.beta * (Mv - Mu)
    return np.concatenate([ru, rv])


def fom_step(ops: FomOperators, u_n, v_n, dt, tol=1e-9, max_iters=25, history=None):
    """One backward-Euler step; returns ``(u, v, newton_iterations)``.

    Newton starts from the previous state and always performs at least one
    update; it stops once the stacked residual 2-norm is ``<= tol * sqrt(N)``,
    or below the roundoff floor of the ``M x / dt`` term for tiny ``dt``.
    Residual norms are appended to ``history`` when a list is given.
    """
    if dt <= 0:
        raise ValueError("time step must be positive")
    N = ops.N
    pattern = ops.jacobian_pattern(dt)
    u, v = u_n.copy(), v_n.copy()
    res = fom_residual(ops, u, v, u_n, v_n, dt)
    history = [] if history is None else history
    history.append(np.linalg.norm(res))
    threshold = tol * math.sqrt(N)
    for it in range(1, max_iters + 1):
        jf = assemble_nonlinear_jacobian(ops.space, u, ops.mu)
        delta = pattern.factorize(jf.data).solve(-res)
        u += delta[:N]
        v += delta[N:]
        res = fom_residual(ops, u, v, u_n, v_n, dt)
        history.append(np.linalg.norm(res))
        floor = ROUNDOFF_FACTOR * np.finfo(float).eps * math.hypot(
            np.linalg.norm(ops.M @ u), np.linalg.norm(ops.M @ v)) / dt
        if history[-1] <= max(threshold, floor):
            return u, v, it
    raise NewtonError(
        f"Newton did not converge in {max_iters} iterations (residual {history[-1]:.3e})",
        history,
    )


@dataclass
class Trajectory:
    """Stored states of one run; snapshot matrices hold one column per stored step."""

    times: np.ndarray
    U: np.ndarray
    V: np.ndarray
    F: np.ndarray
    u_final: np.ndarray
    v_final: np.ndarray
    newton_iterations: np.ndarray
    wall_time: float
    mu: float

    @property
    def mean_newton_iterations(self) -> float:
        return float(np.mean(self.newton_iterations)) if len(self.newton_iterations) else 0.0


def n_steps(dt: float, T: float) -> int:
    return max(int(math.ceil(T / dt - 1e-9)), 0)


def fom_solve(ops: FomOperators, u0, v0, dt, T, snapshot_stride=1, tol=1e-9, max_iters=25,
              collect_nonlinear=True) -> Trajectory:
    """Integrate from ``t = 0`` to ``T``, storing every ``snapshot_stride``-th state.

    ``wall_time`` covers the time-stepping loop only; the nonlinear snapshots
    are evaluated afterwards from the stored states.
    """
    if T <= 0:
        raise ValueError("final time must be positive")
    if snapshot_stride < 1:
        raise ValueError("snapshot_stride must be >= 1")
    steps = n_steps(dt, T)
    stored = np.arange(0, steps + 1, snapshot_stride)
    U = np.empty((ops.N, len(stored)))
    V = np.empty_like(U)
    U[:, 0], V[:, 0] = u0, v0
    iters = np.zeros(steps, dtype=int)

    u, v = np.array(u0, dtype=float), np.array(v0, dtype=float)
    col = 1
    start = time.perf_counter()
    for n in range(1, steps + 1):
        try:
            u, v, iters[n - 1] = fom_step(ops, u, v, dt, tol, max_iters)
        except NewtonError as exc:
            exc.time = n * dt
            raise NewtonError(f"step failed at t={n * dt:g}: {exc}", exc.residuals, n * dt) from exc
        if n % snapshot_stride == 0:
            U[:, col], V[:, col] = u, v
            col += 1
    wall = time.perf_counter() - start
    logger.info("FOM mu=%g: %d steps in %.2fs, mean Newton %.2f", ops.mu, steps, wall,
                iters.mean() if steps else 0)

    if collect_nonlinear:
        F = np.column_stack([ops.nonlinear(U[:, j]) for j in range(U.shape[1])])
    else:
        F = np.empty((ops.N, 0))
    return Trajectory(stored * dt, U, V, F, u, v, iters, wall, ops.mu)


def random_initial_condition(space: DGSpace, seed: int) -> np.ndarray:
    """Independent uniform(-1, 1) values at the local nodes of every element.

    The resulting field is discontinuous; nodal values are mapped to modal
    coefficients through the local Vandermonde matrix.
    """
    rng = np.random.default_rng(seed)
    nodes = space.basis.nodes()
    values = rng.uniform(-1.0, 1.0, size=(space.n_elements, len(nodes)))
    vandermonde = space.basis(nodes)
    return np.linalg.solve(vandermonde, values.T).T.ravel()
