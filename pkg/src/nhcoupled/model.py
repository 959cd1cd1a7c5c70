"""Nonholonomically coupled systems: domain types and the test-problem catalog.

A coupled system has Lagrangian ``|xdot|^2/2 + zdot^2/2 - U(x) - V(z)`` with the
constraint ``A(z) xdot = 0`` where ``A(z)`` has a one-dimensional kernel. The
passenger potential is quadratic, ``U(x) = x^T K x / 2 - f^T x`` with
``K = Khat^T Khat``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

log = logging.getLogger(__name__)

SYSTEM_IDS = (
    "cvt_harmonic",
    "cvt_pendulum",
    "nonholonomic_particle",
    "knife_edge",
    "vertical_disk",
    "mobile_robot",
)

# systems where epsilon changes the data
PERTURBABLE = ("cvt_pendulum", "knife_edge")


class CatalogError(KeyError):
    """Unknown system identifier."""


class SingularConstraintError(ArithmeticError):
    """The constraint matrix lost rank (no unique kernel direction)."""


@dataclass(frozen=True)
class SystemSpec:
    """Immutable description of a coupled system.

    ``constraint`` and ``constraint_dz`` map ``z`` to the ``r x n_x`` matrices
    ``A(z)`` and ``A'(z)``. ``kernel`` is an optional closed form for the unit
    kernel vector; when absent one is computed from an SVD.
    ``mirror`` is the sign pattern acting on ``x`` that, together with
    ``z -> -z``, leaves the constraint invariant (``None`` if there is none).
    """

    name: str
    n_x: int
    r: int
    m: int
    constraint: Callable[[float], np.ndarray]
    constraint_dz: Callable[[float], np.ndarray]
    driver_potential: Callable[[float], float]
    driver_force: Callable[[float], float]  # V'(z)
    driver_curvature: Callable[[float], float]  # V''(z)
    stiffness_factor: np.ndarray
    force_offset: np.ndarray
    epsilon: float = 0.0
    x_periodic: tuple = ()
    z_periodic: bool = False
    group: str = "trivial"
    rho: str = "identity_v"
    kernel: Optional[Callable[[float], np.ndarray]] = None
    mirror: Optional[np.ndarray] = None
    stiffness: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        khat = np.asarray(self.stiffness_factor, dtype=float).reshape(self.m, self.n_x)
        object.__setattr__(self, "stiffness_factor", khat)
        object.__setattr__(self, "force_offset", np.asarray(self.force_offset, dtype=float))
        object.__setattr__(self, "stiffness", khat.T @ khat)
        if self.n_x - self.r != 1:
            raise ValueError(f"{self.name}: need n_x - r == 1, got n_x={self.n_x}, r={self.r}")
        if self.m and np.linalg.matrix_rank(khat) != self.m:
            raise ValueError(f"{self.name}: stiffness factor must have full row rank")

    @property
    def n(self) -> int:
        """Dimension of the full configuration q = (x, z)."""
        return self.n_x + 1


@dataclass(frozen=True)
class FullState:
    """Configuration and velocity of the full constrained system."""

    x: np.ndarray
    z: float
    xdot: np.ndarray
    zdot: float
    t: float = 0.0

    @classmethod
    def from_arrays(cls, q, qdot, t=0.0):
        q = np.asarray(q, dtype=float)
        qdot = np.asarray(qdot, dtype=float)
        return cls(q[:-1].copy(), float(q[-1]), qdot[:-1].copy(), float(qdot[-1]), t)

    @property
    def q(self) -> np.ndarray:
        return np.append(self.x, self.z)

    @property
    def qdot(self) -> np.ndarray:
        return np.append(self.xdot, self.zdot)

    def flipped(self) -> "FullState":
        return FullState(self.x, self.z, -self.xdot, -self.zdot, self.t)


@dataclass(frozen=True)
class ReducedState:
    """Point ``(y, v, z, zdot)`` of the reduced system plus the homogeneous coordinate."""

    y: np.ndarray
    v: float
    z: float
    zdot: float
    eps_coord: float = 1.0

    @property
    def u(self) -> np.ndarray:
        """The linear part ``(y, v, eps_coord)`` acted on by the reduced matrix."""
        return np.concatenate([self.y, [self.v, self.eps_coord]])


def _row(*entries):
    return np.array([entries], dtype=float)


def _cvt_kernel(g):
    def kernel(z):
        s = g(z)
        return np.array([-s, 1.0]) / math.sqrt(1.0 + s * s)

    return kernel


def _knife_kernel(eps):
    def kernel(z):
        a = math.cos(z) - eps
        b = math.sin(z)
        nrm = math.hypot(a, b)
        if nrm < 1e-14:
            raise SingularConstraintError(f"knife edge constraint vanishes at z={z}")
        return np.array([a, b]) / nrm

    return kernel


def _disk_kernel(z):
    return np.array([-math.cos(z), -math.sin(z), 1.0]) / math.sqrt(2.0)


def catalog(name: str, epsilon: float = 0.0) -> SystemSpec:
    """Return one of the six built-in test systems.

    ``epsilon`` perturbs ``cvt_pendulum`` (driver potential) and
    ``knife_edge`` (constraint); other systems ignore it.
    """
    if name not in SYSTEM_IDS:
        raise CatalogError(f"unknown system {name!r}; choose from {', '.join(SYSTEM_IDS)}")
    eps = float(epsilon)
    if not math.isfinite(eps):
        raise ValueError("epsilon must be finite")
    if eps != 0.0 and name not in PERTURBABLE:
        log.warning("epsilon=%g ignored for %s", eps, name)
        eps = 0.0

    if name == "cvt_harmonic":
        return SystemSpec(
            name=name, n_x=2, r=1, m=2,
            constraint=lambda z: _row(1.0, z),
            constraint_dz=lambda z: _row(0.0, 1.0),
            driver_potential=lambda z: 0.5 * z * z,
            driver_force=lambda z: z,
            driver_curvature=lambda z: 1.0,
            stiffness_factor=np.eye(2), force_offset=np.zeros(2),
            x_periodic=(False, False), z_periodic=False,
            group="SO3", rho="flip_v",
            kernel=_cvt_kernel(lambda z: z), mirror=np.array([-1.0, 1.0]),
        )
    if name == "cvt_pendulum":
        # stable equilibrium at z = 0, so the initial data z=0 give an oscillating
        # driver below h = 2 and a rotating one above
        return SystemSpec(
            name=name, n_x=2, r=1, m=2,
            constraint=lambda z: _row(1.0, math.sin(z)),
            constraint_dz=lambda z: _row(0.0, math.cos(z)),
            driver_potential=lambda z: 1.0 - math.cos(z) - eps * math.sin(2.0 * z) / 2.0,
            driver_force=lambda z: math.sin(z) - eps * math.cos(2.0 * z),
            driver_curvature=lambda z: math.cos(z) + 2.0 * eps * math.sin(2.0 * z),
            stiffness_factor=np.eye(2), force_offset=np.zeros(2), epsilon=eps,
            x_periodic=(False, False), z_periodic=True,
            group="SO3", rho="flip_v",
            kernel=_cvt_kernel(math.sin), mirror=np.array([-1.0, 1.0]),
        )
    if name == "nonholonomic_particle":
        return SystemSpec(
            name=name, n_x=2, r=1, m=1,
            constraint=lambda z: _row(1.0, z),
            constraint_dz=lambda z: _row(0.0, 1.0),
            driver_potential=lambda z: 0.5 * z * z,
            driver_force=lambda z: z,
            driver_curvature=lambda z: 1.0,
            stiffness_factor=np.array([[0.0, 1.0]]), force_offset=np.zeros(2),
            x_periodic=(False, False), z_periodic=False,
            group="SO2", rho="flip_v",
            kernel=_cvt_kernel(lambda z: z), mirror=np.array([-1.0, 1.0]),
        )
    if name == "knife_edge":
        return SystemSpec(
            name=name, n_x=2, r=1, m=0,
            constraint=lambda z: _row(-math.sin(z), math.cos(z) - eps),
            constraint_dz=lambda z: _row(-math.cos(z), -math.sin(z)),
            driver_potential=lambda z: 0.0,
            driver_force=lambda z: 0.0,
            driver_curvature=lambda z: 0.0,
            stiffness_factor=np.zeros((0, 2)), force_offset=np.array([1.0, 0.0]), epsilon=eps,
            x_periodic=(False, False), z_periodic=True,
            group="R", rho="identity_v",
            kernel=_knife_kernel(eps),
        )
    disk = dict(
        n_x=3, r=2, m=0,
        constraint=lambda z: np.array([[1.0, 0.0, math.cos(z)], [0.0, 1.0, math.sin(z)]]),
        constraint_dz=lambda z: np.array([[0.0, 0.0, -math.sin(z)], [0.0, 0.0, math.cos(z)]]),
        stiffness_factor=np.zeros((0, 3)), force_offset=np.zeros(3),
        x_periodic=(False, False, True), z_periodic=True,
        group="trivial", rho="identity_v", kernel=_disk_kernel,
    )
    if name == "vertical_disk":
        return SystemSpec(
            name=name,
            driver_potential=lambda z: 0.0,
            driver_force=lambda z: 0.0,
            driver_curvature=lambda z: 0.0,
            **disk,
        )
    return SystemSpec(
        name=name,
        driver_potential=math.sin,
        driver_force=math.cos,
        driver_curvature=lambda z: -math.sin(z),
        **disk,
    )


def kernel_vector(spec: SystemSpec, z: float, previous: Optional[np.ndarray] = None) -> np.ndarray:
    """Unit vector spanning ``ker A(z)``.

    Catalog systems use their closed forms. Otherwise the last right singular
    vector is used, its sign chosen to agree with ``previous`` when given.
    """
    a = spec.constraint(z)
    if spec.kernel is not None:
        _check_rank(a, z)
        return spec.kernel(z)
    _, s, vt = np.linalg.svd(a)
    if s[-1] < 1e-12 * max(1.0, s[0]):
        raise SingularConstraintError(f"A(z) is rank deficient at z={z}")
    k = vt[-1]
    if previous is not None:
        if k @ previous < 0:
            k = -k
    elif k[-1] < 0:
        k = -k
    return k


def _check_rank(a, z):
    if a.shape[0] == 1:
        if float(a[0] @ a[0]) < 1e-24:
            raise SingularConstraintError(f"A(z) vanishes at z={z}")
        return
    if abs(np.linalg.det(a @ a.T)) < 1e-24:
        raise SingularConstraintError(f"A(z) is rank deficient at z={z}")


def reduced_matrix(spec: SystemSpec, z: float) -> np.ndarray:
    """The ``(m+2) x (m+2)`` matrix ``L(z)`` acting on ``(y, v, eps_coord)``."""
    m = spec.m
    k = kernel_vector(spec, z)
    kk = spec.stiffness_factor @ k
    out = np.zeros((m + 2, m + 2))
    out[:m, m] = kk
    out[m, :m] = -kk
    out[m, m + 1] = k @ spec.force_offset
    return out


def potentials(spec: SystemSpec, x, z: float):
    """Return ``(U, grad U, V, V')`` at ``(x, z)``."""
    x = np.asarray(x, dtype=float)
    kx = spec.stiffness @ x
    u = 0.5 * x @ kx - spec.force_offset @ x
    return float(u), kx - spec.force_offset, float(spec.driver_potential(z)), float(spec.driver_force(z))
