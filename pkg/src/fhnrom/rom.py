"""Backward-Euler/Newton integration of the POD and POD-DEIM reduced systems."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .dg import DGSpace, assemble_nonlinear, assemble_nonlinear_jacobian
from .deim import DeimOperator, deim_jacobian, eval_nonlinear_deim
from .fom import NewtonError, n_steps
from .numerics import solve_dense
from .pod import RomOperators

__all__ = [
    "PodNonlinearity",
    "DeimNonlinearity",
    "RomState",
    "RomTrajectory",
    "project_state",
    "rom_residual",
    "rom_step",
    "rom_solve",
    "relative_l2_error",
]


class PodNonlinearity:
    """``Psi^T F(Psi u)`` by full assembly followed by projection (cost grows with N)."""

    name = "pod"

    def __init__(self, space: DGSpace, psi_u: np.ndarray):
        self.space = space
        self.psi = psi_u

    def value(self, u_red, mu):
        return self.psi.T @ assemble_nonlinear(self.space, self.psi @ u_red, mu)

    def jacobian(self, u_red, mu):
        J = assemble_nonlinear_jacobian(self.space, self.psi @ u_red, mu)
        return self.psi.T @ (J @ self.psi)


class DeimNonlinearity:
    """DEIM approximation evaluated on the owner elements of the sampled indices."""

    name = "deim"

    def __init__(self, op: DeimOperator):
        self.op = op

    def value(self, u_red, mu):
        return eval_nonlinear_deim(self.op, u_red, mu)

    def jacobian(self, u_red, mu):
        return deim_jacobian(self.op, u_red, mu)


@dataclass
class RomState:
    u: np.ndarray
    v: np.ndarray
    t: float = 0.0


def project_state(psi: np.ndarray, M, w: np.ndarray) -> np.ndarray:
    """M-orthogonal projection coefficients ``Psi^T M w``."""
    return psi.T @ (M @ w)


def rom_residual(ops: RomOperators, nonlin, u, v, u_n, v_n, dt, mu):
    a, b = ops.alpha, ops.beta
    ru = (u - u_n) / dt + ops.S_u @ u + a * (ops.M_u @ v) - a * u + nonlin.value(u, mu)
    rv = (v - v_n) / dt + ops.S_v @ v + b * v - b * (ops.M_v @ u)
    return np.concatenate([ru, rv])


def rom_step(ops: RomOperators, nonlin, state: RomState, dt: float, mu: float,
             tol=1e-9, max_iters=25):
    """Advance ``state`` by one backward-Euler step; returns ``(RomState, newton_iterations)``."""
    if dt <= 0:
        raise ValueError("time step must be positive")
    k = ops.k
    eye = np.eye(k)
    a, b = ops.alpha, ops.beta
    linear = np.block([
        [eye / dt + ops.S_u - a * eye, a * ops.M_u],
        [-b * ops.M_v, eye / dt + ops.S_v + b * eye],
    ])
    u, v = state.u.copy(), state.v.copy()
    res = rom_residual(ops, nonlin, u, v, state.u, state.v, dt, mu)
    history = [np.linalg.norm(res)]
    threshold = tol * math.sqrt(2 * k)
    for it in range(1, max_iters + 1):
        jac = linear.copy()
        jac[:k, :k] += nonlin.jacobian(u, mu)
        delta = solve_dense(jac, -res)
        u += delta[:k]
        v += delta[k:]
        res = rom_residual(ops, nonlin, u, v, state.u, state.v, dt, mu)
        history.append(np.linalg.norm(res))
        if history[-1] <= threshold:
            return RomState(u, v, state.t + dt), it
    raise NewtonError(
        f"reduced Newton did not converge in {max_iters} iterations (residual {history[-1]:.3e})",
        history,
        state.t + dt,
    )


@dataclass
class RomTrajectory:
    times: np.ndarray
    U: np.ndarray  # (k, steps + 1)
    V: np.ndarray
    newton_iterations: np.ndarray
    wall_time: float
    mu: float
    variant: str

    def lift(self, psi_u, psi_v, column=-1):
        return psi_u @ self.U[:, column], psi_v @ self.V[:, column]


def rom_solve(ops: RomOperators, nonlin, u0, v0, dt, T, mu, tol=1e-9, max_iters=25) -> RomTrajectory:
    """Integrate the reduced system on the same time grid as the full model.

    ``wall_time`` measures the stepping loop only.
    """
    if T <= 0:
        raise ValueError("final time must be positive")
    steps = n_steps(dt, T)
    k = ops.k
    U = np.empty((k, steps + 1))
    V = np.empty((k, steps + 1))
    U[:, 0], V[:, 0] = u0, v0
    iters = np.zeros(steps, dtype=int)
    state = RomState(np.array(u0, dtype=float), np.array(v0, dtype=float))
    start = time.perf_counter()
    for n in range(1, steps + 1):
        try:
            state, iters[n - 1] = rom_step(ops, nonlin, state, dt, mu, tol, max_iters)
        except NewtonError as exc:
            raise NewtonError(f"reduced step failed at t={n * dt:g}: {exc}", exc.residuals, n * dt) from exc
        U[:, n], V[:, n] = state.u, state.v
    wall = time.perf_counter() - start
    return RomTrajectory(np.arange(steps + 1) * dt, U, V, iters, wall, mu, nonlin.name)


def relative_l2_error(M, reference: np.ndarray, approx: np.ndarray) -> float:
    """``||approx - reference||_M / ||reference||_M``."""
    e = approx - reference
    return float(np.sqrt(e @ (M @ e)) / np.sqrt(reference @ (M @ reference)))
