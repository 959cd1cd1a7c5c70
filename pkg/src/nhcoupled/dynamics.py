"""Continuous dynamics: multiplier elimination, reduction and first integrals."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import FullState, ReducedState, SingularConstraintError, SystemSpec, kernel_vector


@dataclass(frozen=True)
class InvariantTriple:
    H_total: float
    h_driver: float
    E_passenger: float


def solve_gram(a: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    """Solve ``(A A^T) lam = rhs`` in closed form for one or two constraint rows."""
    g = a @ a.T
    r = g.shape[0]
    if r == 1:
        if g[0, 0] < 1e-24:
            raise SingularConstraintError("A A^T is singular")
        return rhs / g[0, 0]
    if r == 2:
        det = g[0, 0] * g[1, 1] - g[0, 1] * g[1, 0]
        if abs(det) < 1e-24:
            raise SingularConstraintError("A A^T is singular")
        return np.array([g[1, 1] * rhs[0] - g[0, 1] * rhs[1], g[0, 0] * rhs[1] - g[1, 0] * rhs[0]]) / det
    return np.linalg.solve(g, rhs)


def multiplier(spec: SystemSpec, state: FullState) -> np.ndarray:
    """Lagrange multiplier keeping ``A(z) xdot`` constant in time."""
    a = spec.constraint(state.z)
    grad_u = spec.stiffness @ state.x - spec.force_offset
    rhs = a @ grad_u - state.zdot * (spec.constraint_dz(state.z) @ state.xdot)
    return solve_gram(a, rhs)


def accelerations(spec: SystemSpec, state: FullState):
    """Return ``(xddot, zddot, lam)``."""
    lam = multiplier(spec, state)
    a = spec.constraint(state.z)
    xdd = -(spec.stiffness @ state.x - spec.force_offset) + a.T @ lam
    return xdd, -spec.driver_force(state.z), lam


def full_rhs(spec: SystemSpec, state: FullState) -> FullState:
    """Time derivative of ``state``, packed as a FullState (positions hold velocities)."""
    xdd, zdd, _ = accelerations(spec, state)
    return FullState(state.xdot.copy(), state.zdot, xdd, zdd, 1.0)


def project_reduced(spec: SystemSpec, state: FullState) -> ReducedState:
    k = kernel_vector(spec, state.z)
    return ReducedState(spec.stiffness_factor @ state.x, float(state.xdot @ k), state.z, state.zdot, 1.0)


def reduced_rhs(spec: SystemSpec, rstate: ReducedState) -> ReducedState:
    """Derivative of the reduced system; ``eps_coord`` has zero rate."""
    k = kernel_vector(spec, rstate.z)
    kk = spec.stiffness_factor @ k
    ydot = kk * rstate.v
    vdot = float(-kk @ rstate.y + rstate.eps_coord * (k @ spec.force_offset))
    return ReducedState(ydot, vdot, rstate.zdot, -spec.driver_force(rstate.z), 0.0)


def reconstruct_velocity(spec: SystemSpec, v: float, z: float) -> np.ndarray:
    return v * kernel_vector(spec, z)


def invariants(spec: SystemSpec, state: FullState) -> InvariantTriple:
    x = state.x
    u = 0.5 * x @ spec.stiffness @ x - spec.force_offset @ x
    h = 0.5 * state.zdot**2 + spec.driver_potential(state.z)
    v = state.xdot @ kernel_vector(spec, state.z)
    return InvariantTriple(
        float(0.5 * state.xdot @ state.xdot + u + h),
        float(h),
        float(0.5 * v * v + u),
    )


def invariant_series(spec: SystemSpec, x, z, xdot, zdot):
    """Vectorised invariants over stored trajectory arrays; returns (H, h, E)."""
    x = np.atleast_2d(x)
    xdot = np.atleast_2d(xdot)
    u = 0.5 * np.einsum("ij,jk,ik->i", x, spec.stiffness, x) - x @ spec.force_offset
    vpot = np.array([spec.driver_potential(zz) for zz in z])
    h = 0.5 * np.asarray(zdot) ** 2 + vpot
    ks = np.array([kernel_vector(spec, zz) for zz in z])
    v = np.einsum("ij,ij->i", xdot, ks)
    big_h = 0.5 * np.einsum("ij,ij->i", xdot, xdot) + u + h
    return big_h, h, 0.5 * v * v + u


def admissible_state(spec: SystemSpec, x, z: float, v: float, zdot: float, t: float = 0.0) -> FullState:
    """State on the constraint surface with kernel speed ``v``."""
    return FullState(np.asarray(x, dtype=float), float(z), reconstruct_velocity(spec, v, z), float(zdot), t)
