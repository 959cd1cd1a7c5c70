"""One-step nonholonomic integrators and trajectory driver.

All catalog systems share two structural facts that the steppers exploit: the
constraint depends on the driver coordinate only, and the multiplier never
enters the driver row. The driver update is therefore solved first (explicitly
or by scalar Newton) and the passenger update reduces to a linear saddle-point
solve in ``(xdot_1, lam)``. The discrete-gradient method couples everything
through its discrete gradient and is solved by a full Newton iteration.

Velocities are collocated with positions for every method except the
leap-frog, whose velocity variable is the staggered one: ``xdot_1`` is the
velocity on ``[t_0, t_1]`` and drives the position update.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .dynamics import accelerations, invariant_series, solve_gram
from .model import FullState, SystemSpec, kernel_vector

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverSettings:
    newton_tol: float = 1e-12
    newton_max_iter: int = 50
    constraint_tol: float = 1e-10

    def __post_init__(self):
        for name in ("newton_tol", "constraint_tol"):
            val = getattr(self, name)
            if not (math.isfinite(val) and val > 0):
                raise ValueError(f"{name} must be positive and finite, got {val}")
        if self.newton_max_iter < 1:
            raise ValueError("newton_max_iter must be >= 1")


DEFAULT_SETTINGS = SolverSettings()


@dataclass(frozen=True)
class StepResult:
    state: FullState
    lam: np.ndarray
    newton_iters: int
    residual: float


class StepFailure(RuntimeError):
    def __init__(self, message, residual=float("nan"), step_index=None, partial=None):
        super().__init__(message)
        self.residual = residual
        self.step_index = step_index
        self.partial = partial


# -- shared pieces -----------------------------------------------------------


def _grad_u(spec, x):
    return spec.stiffness @ x - spec.force_offset


def _saddle_solve(mat, a_force, a_con, rhs):
    """Solve ``[[mat, -a_force^T], [a_con, 0]] [p; lam] = [rhs; 0]``."""
    n, r = mat.shape[0], a_con.shape[0]
    big = np.zeros((n + r, n + r))
    big[:n, :n] = mat
    big[:n, n:] = -a_force.T
    big[n:, :n] = a_con
    sol = np.linalg.solve(big, np.concatenate([rhs, np.zeros(r)]))
    return sol[:n], sol[n:]


def _driver_implicit(spec, z_pred, w0, fz0, h, alpha, settings):
    """Solve ``z1 = z_pred + alpha h (w0 - alpha h V'(z0) - (1-alpha) h V'(z1))`` for z1."""
    beta = alpha * (1.0 - alpha) * h * h
    base = z_pred + alpha * h * (w0 - alpha * h * fz0)
    z1 = base - beta * spec.driver_force(z_pred)
    for it in range(1, settings.newton_max_iter + 1):
        g = z1 - base + beta * spec.driver_force(z1)
        dz = g / (1.0 + beta * spec.driver_curvature(z1))
        z1 -= dz
        if abs(dz) <= 4e-16 * (1.0 + abs(z1)):
            return z1, it
    g = z1 - base + beta * spec.driver_force(z1)
    if abs(g) > settings.newton_tol * max(1.0, alpha * h):
        raise StepFailure(f"driver Newton did not converge (|g|={abs(g):.3e})", residual=abs(g))
    return z1, settings.newton_max_iter


# -- DLA(alpha) --------------------------------------------------------------


def dla_relations(spec, state, h, alpha, q1, qd1, lam):
    """Residual of the four DLA(alpha) relations at a candidate ``(q1, qdot1, lam)``."""
    q0, qd0 = state.q, state.qdot
    n = spec.n_x
    qa = q0 + (1.0 - alpha) * h * qd0
    grad0 = np.append(_grad_u(spec, q0[:n]), spec.driver_force(q0[n]))
    grad1 = np.append(_grad_u(spec, q1[:n]), spec.driver_force(q1[n]))
    force = np.append(spec.constraint(qa[n]).T @ lam, 0.0)
    r1 = qd1 - qd0 + alpha * h * grad0 + (1.0 - alpha) * h * grad1 - h * force
    r2 = q1 - qa - alpha * h * qd1
    r3 = spec.constraint(q1[n]) @ qd1[:n]
    return np.concatenate([r1, r2, r3])


def step_dla(spec: SystemSpec, state: FullState, h: float, alpha: float = 0.5,
             settings: SolverSettings = DEFAULT_SETTINGS) -> StepResult:
    """Discrete Lagrange-d'Alembert step with quadrature weight ``alpha``."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    x0, z0, p0, w0 = state.x, state.z, state.xdot, state.zdot
    za = z0 + (1.0 - alpha) * h * w0
    xa = x0 + (1.0 - alpha) * h * p0
    fz0 = spec.driver_force(z0)
    if alpha == 0.0:
        z1, iters = za, 0
    else:
        z1, iters = _driver_implicit(spec, za, w0, fz0, h, alpha, settings)
    w1 = w0 - alpha * h * fz0 - (1.0 - alpha) * h * spec.driver_force(z1)

    kmat = spec.stiffness
    mat = np.eye(spec.n_x) + alpha * (1.0 - alpha) * h * h * kmat
    rhs = p0 - alpha * h * _grad_u(spec, x0) - (1.0 - alpha) * h * (kmat @ xa - spec.force_offset)
    p1, lam = _saddle_solve(mat, h * spec.constraint(za), spec.constraint(z1), rhs)
    x1 = xa + alpha * h * p1
    new = FullState(x1, z1, p1, w1, state.t + h)
    res = float(np.linalg.norm(dla_relations(spec, state, h, alpha, new.q, new.qdot, lam)))
    return _finish(new, lam, iters + 1, res, settings)


# -- DLA(0,1) ----------------------------------------------------------------


def dla01_relations(spec, state, h, q1, qd1, lam):
    q0, qd0 = state.q, state.qdot
    n = spec.n_x
    qh = q0 + 0.5 * h * qd0
    grad = np.append(_grad_u(spec, qh[:n]), spec.driver_force(qh[n]))
    force = np.append(spec.constraint(qh[n]).T @ lam, 0.0)
    r1 = qd1 - qd0 + h * grad - h * force
    r2 = q1 - qh - 0.5 * h * qd1
    r3 = spec.constraint(q1[n]) @ qd1[:n]
    return np.concatenate([r1, r2, r3])


def step_dla01(spec: SystemSpec, state: FullState, h: float,
               settings: SolverSettings = DEFAULT_SETTINGS) -> StepResult:
    """Half a step of DLA(0) followed by half a step of DLA(1); linearly implicit."""
    xh = state.x + 0.5 * h * state.xdot
    zh = state.z + 0.5 * h * state.zdot
    w1 = state.zdot - h * spec.driver_force(zh)
    z1 = zh + 0.5 * h * w1
    # the force is evaluated at the explicit midpoint, so the velocity block is the identity
    mat = np.eye(spec.n_x)
    rhs = state.xdot - h * _grad_u(spec, xh)
    p1, lam = _saddle_solve(mat, h * spec.constraint(zh), spec.constraint(z1), rhs)
    new = FullState(xh + 0.5 * h * p1, z1, p1, w1, state.t + h)
    res = float(np.linalg.norm(dla01_relations(spec, state, h, new.q, new.qdot, lam)))
    return _finish(new, lam, 1, res, settings)


# -- leap-frog ---------------------------------------------------------------


def leapfrog_relations(spec, state, h, q1, qd1, lam):
    q0, qd0 = state.q, state.qdot
    n = spec.n_x
    grad = np.append(_grad_u(spec, q0[:n]), spec.driver_force(q0[n]))
    a0 = spec.constraint(q0[n])
    force = np.append(a0.T @ lam, 0.0)
    r1 = qd1 - qd0 - h * (-grad + force)
    r2 = q1 - q0 - h * qd1
    r3 = a0 @ (qd0[:n] + qd1[:n])
    return np.concatenate([r1, r2, r3])


def step_leapfrog(spec: SystemSpec, state: FullState, h: float,
                  settings: SolverSettings = DEFAULT_SETTINGS) -> StepResult:
    """Nonholonomic leap-frog on staggered velocities; one linear solve for ``lam``."""
    a0 = spec.constraint(state.z)
    w1 = state.zdot - h * spec.driver_force(state.z)
    base = state.xdot - h * _grad_u(spec, state.x)
    # A0 (p0 + base + h A0^T lam) = 0
    lam = solve_gram(a0, -(a0 @ (state.xdot + base)) / h)
    p1 = base + h * (a0.T @ lam)
    new = FullState(state.x + h * p1, state.z + h * w1, p1, w1, state.t + h)
    res = float(np.linalg.norm(leapfrog_relations(spec, state, h, new.q, new.qdot, lam)))
    return _finish(new, lam, 1, res, settings)


# -- discrete gradient -------------------------------------------------------


def _total_grad(spec, q):
    n = spec.n_x
    return np.append(_grad_u(spec, q[:n]), spec.driver_force(q[n]))


def discrete_gradient(spec: SystemSpec, q0: np.ndarray, q1: np.ndarray):
    """Midpoint (Gonzalez) discrete gradient of ``U(x) + V(z)`` and its ``q1``-Jacobian."""
    return _discrete_gradient_inc(spec, q0, np.asarray(q1) - q0)


def _discrete_gradient_inc(spec, q0, d):
    n = spec.n_x
    q1 = q0 + d
    qbar = 0.5 * (q0 + q1)
    grad = _total_grad(spec, qbar)
    hess = np.zeros((n + 1, n + 1))
    hess[:n, :n] = spec.stiffness
    hess[n, n] = spec.driver_curvature(qbar[n])
    dd = d @ d
    if math.sqrt(dd) < 1e-14:
        return grad, 0.5 * hess
    zb, dz = qbar[n], d[n]
    # the quadratic passenger part is integrated exactly by the midpoint rule
    c = (spec.driver_potential(q1[n]) - spec.driver_potential(q0[n]) - spec.driver_force(zb) * dz) / dd
    dc = -2.0 * c * d / dd
    dc[n] += (spec.driver_force(q1[n]) - spec.driver_force(zb) - 0.5 * hess[n, n] * dz) / dd
    jac = 0.5 * hess + c * np.eye(n + 1) + np.outer(d, dc)
    return grad + c * d, jac


def dd_relations(spec, state, h, q1, qd1, lam):
    q0, qd0 = state.q, state.qdot
    n = spec.n_x
    qbar = 0.5 * (q0 + q1)
    abar = spec.constraint(qbar[n])
    g, _ = discrete_gradient(spec, q0, q1)
    r1 = q1 - q0 - 0.5 * h * (qd0 + qd1)
    r2 = qd1 - qd0 + h * g - h * np.append(abar.T @ lam, 0.0)
    r3 = abar @ (0.5 * (qd0[:n] + qd1[:n]))
    return np.concatenate([r1, r2, r3])


def step_discrete_gradient(spec: SystemSpec, state: FullState, h: float,
                           settings: SolverSettings = DEFAULT_SETTINGS) -> StepResult:
    """Energy-preserving discrete-gradient step, Newton on ``(q1, lam)``."""
    n, r = spec.n_x, spec.r
    q0, qd0 = state.q, state.qdot
    # iterate on the increment so that large |q0| does not pollute the residual
    d = h * qd0
    lam = np.zeros(r)
    jac = np.zeros((n + 1 + r, n + 1 + r))
    res = np.inf
    for it in range(1, settings.newton_max_iter + 1):
        zb = q0[n] + 0.5 * d[n]
        abar = spec.constraint(zb)
        dabar = spec.constraint_dz(zb)
        g, dg = _discrete_gradient_inc(spec, q0, d)
        qd1 = 2.0 * d / h - qd0
        fv = qd1 - qd0 + h * g
        fv[:n] -= h * (abar.T @ lam)
        fc = abar @ d[:n] / h
        f = np.concatenate([fv, fc])
        prev, res = res, float(np.linalg.norm(f))
        # converged, or stalled at the roundoff floor
        if res <= settings.newton_tol or (res >= 0.5 * prev and res <= 1e3 * settings.newton_tol):
            break
        jac[: n + 1, : n + 1] = (2.0 / h) * np.eye(n + 1) + h * dg
        jac[:n, n] -= 0.5 * h * (dabar.T @ lam)
        jac[:n, n + 1:] = -h * abar.T
        jac[n + 1:, :n] = abar / h
        jac[n + 1:, n] = 0.5 * (dabar @ d[:n]) / h
        jac[n + 1:, n + 1:] = 0.0
        delta = np.linalg.solve(jac, -f)
        d = d + delta[: n + 1]
        lam = lam + delta[n + 1:]
    else:
        raise StepFailure(f"discrete-gradient Newton did not converge (residual {res:.3e})", residual=res)
    qd1 = 2.0 * d / h - qd0
    new = FullState.from_arrays(q0 + d, qd1, state.t + h)
    return StepResult(new, lam, it, res)


# -- reference ---------------------------------------------------------------


def _rk4_rhs(spec, s):
    n = spec.n_x
    st = FullState(s[:n], s[n], s[n + 1: 2 * n + 1], s[2 * n + 1])
    xdd, zdd, _ = accelerations(spec, st)
    return np.concatenate([s[n + 1:], xdd, [zdd]])


def step_reference(spec: SystemSpec, state: FullState, h: float, substeps: int = 10) -> FullState:
    """Classical RK4 on the index-reduced ODE, then projection of ``xdot`` onto ``ker A``."""
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    n = spec.n_x
    s = np.concatenate([state.q, state.qdot])
    dt = h / substeps
    for _ in range(substeps):
        k1 = _rk4_rhs(spec, s)
        k2 = _rk4_rhs(spec, s + 0.5 * dt * k1)
        k3 = _rk4_rhs(spec, s + 0.5 * dt * k2)
        k4 = _rk4_rhs(spec, s + dt * k3)
        s = s + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    z1 = s[n]
    k = kernel_vector(spec, z1)
    xd = s[n + 1: 2 * n + 1]
    return FullState(s[:n], z1, (xd @ k) * k, s[2 * n + 1], state.t + h)


def _finish(new, lam, iters, res, settings):
    if not res <= settings.newton_tol * 1e3:
        raise StepFailure(f"step residual {res:.3e} exceeds tolerance", residual=res)
    return StepResult(new, lam, iters, res)


# -- stepper selection -------------------------------------------------------


@dataclass(frozen=True)
class StepperKind:
    """Which one-step method to use: ``dla`` (with ``alpha``), ``dla01``, ``lf``, ``dd`` or ``reference``."""

    tag: str
    alpha: float = 0.5
    substeps: int = 10

    def __post_init__(self):
        if self.tag not in ("dla", "dla01", "lf", "dd", "reference"):
            raise ValueError(f"unknown stepper tag {self.tag!r}")
        if not math.isfinite(self.alpha):
            raise ValueError("alpha must be finite")
        if self.substeps < 1:
            raise ValueError("substeps must be >= 1")

    @classmethod
    def from_name(cls, name: str) -> "StepperKind":
        name = name.strip().lower()
        if name.startswith("dla") and name != "dla01":
            return cls("dla", alpha=float(name[3:]))
        if name in ("dla01", "lf", "dd"):
            return cls(name)
        if name in ("ref", "reference"):
            return cls("reference")
        raise ValueError(f"unknown method {name!r}")

    @property
    def name(self) -> str:
        if self.tag == "dla":
            return f"dla{self.alpha:g}"
        return "ref" if self.tag == "reference" else self.tag

    @property
    def staggered(self) -> bool:
        return self.tag == "lf"

    def step(self, spec: SystemSpec, state: FullState, h: float,
             settings: SolverSettings = DEFAULT_SETTINGS) -> StepResult:
        if self.tag == "dla":
            return step_dla(spec, state, h, self.alpha, settings)
        if self.tag == "dla01":
            return step_dla01(spec, state, h, settings)
        if self.tag == "lf":
            return step_leapfrog(spec, state, h, settings)
        if self.tag == "dd":
            return step_discrete_gradient(spec, state, h, settings)
        new = step_reference(spec, state, h, self.substeps)
        return StepResult(new, np.zeros(spec.r), 0, 0.0)

    def reverse(self, state: FullState, h: float) -> FullState:
        """Time-reversal involution matched to the method's velocity variable.

        Collocated methods flip all velocities. The leap-frog velocity belongs to
        the preceding interval, so reversal first steps back along it.
        """
        if self.staggered:
            return FullState(state.x - h * state.xdot, state.z - h * state.zdot,
                             -state.xdot, -state.zdot, state.t)
        return state.flipped()

    def start(self, spec: SystemSpec, state: FullState, h: float) -> FullState:
        """Map collocated data ``(q(0), qdot(0))`` to the method's own velocity variable.

        For leap-frog this is ``w_{-1/2} = qdot(0) - (h/2) qddot(0)`` with the exact
        multiplier, so that ``(w_{-1/2} + w_{1/2})/2 = qdot(0)``.
        """
        if not self.staggered:
            return state
        xdd, zdd, _ = accelerations(spec, state)
        return FullState(state.x, state.z, state.xdot - 0.5 * h * xdd, state.zdot - 0.5 * h * zdd, state.t)


BENCHMARK_METHODS = ("dla0.5", "dla0.4", "dla01", "lf", "dd")


# -- trajectories ------------------------------------------------------------


@dataclass
class Trajectory:
    """Stored trajectory; arrays indexed by step."""

    times: np.ndarray
    x: np.ndarray
    z: np.ndarray
    xdot: np.ndarray
    zdot: np.ndarray
    _inv: Optional[tuple] = field(default=None, repr=False)

    def __len__(self):
        return len(self.times)

    def state(self, i: int) -> FullState:
        return FullState(self.x[i], float(self.z[i]), self.xdot[i], float(self.zdot[i]), float(self.times[i]))

    @property
    def states(self):
        return [self.state(i) for i in range(len(self))]

    def invariants(self, spec: SystemSpec):
        """Arrays ``(H, h, E)`` at every stored time."""
        if self._inv is None:
            self._inv = invariant_series(spec, self.x, self.z, self.xdot, self.zdot)
        return self._inv


def step_count(h: float, t_end: float) -> int:
    """Smallest number of steps whose span covers ``[0, t_end]``."""
    if not (h > 0 and math.isfinite(h)):
        raise ValueError("step size must be positive")
    if not (t_end >= 0 and math.isfinite(t_end)):
        raise ValueError("t_end must be finite and non-negative")
    n = int(math.ceil(t_end / h - 1e-9))
    if abs(n * h - t_end) > 1e-9 * max(1.0, t_end):
        log.info("t_end=%g is not a multiple of h=%g; integrating %d steps to t=%g", t_end, h, n, n * h)
    return n


def integrate(spec: SystemSpec, stepper: StepperKind, state0: FullState, h: float, t_end: float,
              observer: Optional[Callable[[int, FullState], None]] = None,
              settings: SolverSettings = DEFAULT_SETTINGS) -> Trajectory:
    """Integrate ``step_count(h, t_end)`` steps; ``observer(k, state)`` sees every state.

    Stored velocities are collocated with the positions. For leap-frog they are
    the means of the adjacent staggered velocities, which costs one extra step.
    """
    resid = float(np.linalg.norm(spec.constraint(state0.z) @ state0.xdot))
    if resid > settings.constraint_tol:
        raise ValueError(f"initial state violates the constraint (|A xdot| = {resid:.3e})")
    nsteps = step_count(h, t_end)
    x = np.empty((nsteps + 1, spec.n_x))
    xd = np.empty((nsteps + 1, spec.n_x))
    z = np.empty(nsteps + 1)
    zd = np.empty(nsteps + 1)
    times = state0.t + h * np.arange(nsteps + 1)
    stag = stepper.staggered
    raw = stepper.start(spec, state0, h)
    if stag:
        ahead = _advance(spec, stepper, raw, h, settings, 0, times, x, z, xd, zd)
    for k in range(nsteps + 1):
        if k and stag:
            raw, ahead = ahead, _advance(spec, stepper, ahead, h, settings, k, times, x, z, xd, zd)
        elif k:
            raw = _advance(spec, stepper, raw, h, settings, k, times, x, z, xd, zd)
        if stag:
            # raw carries w_{k-1/2}, ahead carries w_{k+1/2}
            state = FullState(raw.x, raw.z, 0.5 * (raw.xdot + ahead.xdot), 0.5 * (raw.zdot + ahead.zdot), times[k])
        else:
            state = FullState(raw.x, raw.z, raw.xdot, raw.zdot, times[k])
        x[k], z[k], xd[k], zd[k] = state.x, state.z, state.xdot, state.zdot
        if observer is not None:
            observer(k, state)
    return Trajectory(times, x, z, xd, zd)


def _advance(spec, stepper, state, h, settings, k, times, x, z, xd, zd):
    try:
        new = stepper.step(spec, state, h, settings).state
    except StepFailure as exc:
        exc.step_index = k
        exc.partial = Trajectory(times[:k], x[:k], z[:k], xd[:k], zd[:k])
        raise
    return FullState(new.x, new.z, new.xdot, new.zdot, state.t + h)
