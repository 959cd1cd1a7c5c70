"""Driver periodicity, Floquet monodromy, averaging and long-time diagnostics."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.optimize import brentq, minimize_scalar

from .integrators import DEFAULT_SETTINGS, SolverSettings, StepperKind, Trajectory
from .model import ReducedState, SystemSpec, kernel_vector, reduced_matrix

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
ODE_TOL = 1e-12

# drift iff the fitted trend over the run exceeds DRIFT_FACTOR times the
# early error amplitude and DRIFT_FLOOR * (1 + |I(0)|)
DRIFT_FACTOR = 0.05
DRIFT_FLOOR = 1e-8


class PeriodError(ArithmeticError):
    """The driver motion is not periodic (equilibrium or separatrix)."""


class BranchError(ArithmeticError):
    """The monodromy lies outside the region where the logarithm is unique."""


# -- driver ------------------------------------------------------------------


def _vmax(spec: SystemSpec) -> float:
    grid = np.linspace(0.0, TWO_PI, 2049)
    vals = np.array([spec.driver_potential(z) for z in grid])
    i = int(np.argmax(vals))
    res = minimize_scalar(lambda z: -spec.driver_potential(z), bracket=(grid[i - 1], grid[i], grid[i + 1])
                          if 0 < i < len(grid) - 1 else None, tol=1e-14)
    return max(float(vals[i]), -float(res.fun))


def driver_regime(spec: SystemSpec, z0: float, zdot0: float) -> str:
    """``'oscillating'`` or ``'rotating'`` for the driver started at ``(z0, zdot0)``."""
    if zdot0 == 0.0 and spec.driver_force(z0) == 0.0:
        raise PeriodError(f"driver at rest at an equilibrium z0={z0}")
    if not spec.z_periodic:
        return "oscillating"
    energy = 0.5 * zdot0**2 + spec.driver_potential(z0)
    top = _vmax(spec)
    if abs(energy - top) <= 1e-9 * (1.0 + abs(top)):
        raise PeriodError("driver energy sits on the separatrix")
    return "rotating" if energy > top else "oscillating"


def _driver_field(spec):
    def f(t, y):
        return [y[1], -spec.driver_force(y[0])]

    return f


@dataclass
class DriverOrbit:
    """Periodic driver solution with dense output on one period."""

    spec: SystemSpec
    z0: float
    zdot0: float
    period: float
    regime: str
    sol: object = field(repr=False)

    @property
    def shift(self) -> float:
        """Increase of ``z`` over one period (0 when oscillating)."""
        return math.copysign(TWO_PI, self.zdot0) if self.regime == "rotating" else 0.0

    def __call__(self, t):
        """``(z, zdot)`` at time ``t`` (any real ``t``)."""
        n = math.floor(t / self.period)
        z, zd = self.sol(t - n * self.period)
        return z + n * self.shift, zd

    def z(self, t: float) -> float:
        return float(self(t)[0])


def _first_event(fun, y0, event, t_guess, min_t):
    t_end = t_guess
    for _ in range(12):
        sol = solve_ivp(fun, (0.0, t_end), y0, method="DOP853", rtol=ODE_TOL, atol=ODE_TOL, events=event)
        hits = [t for t in sol.t_events[0] if t > min_t]
        if hits:
            return hits[0]
        t_end *= 2.0
    raise PeriodError("no return to the section found")


def driver_orbit(spec: SystemSpec, z0: float, zdot0: float) -> DriverOrbit:
    regime = driver_regime(spec, z0, zdot0)
    fun = _driver_field(spec)
    y0 = [z0, zdot0]
    if regime == "rotating" and spec.driver_force(z0) == 0.0 and all(
            spec.driver_force(z) == 0.0 for z in np.linspace(0, TWO_PI, 17)):
        period = TWO_PI / abs(zdot0)
    elif regime == "rotating":
        target = z0 + math.copysign(TWO_PI, zdot0)

        def event(t, y):
            return y[0] - target

        event.terminal = True
        period = _first_event(fun, y0, event, 4.0 * TWO_PI / max(abs(zdot0), 1e-3), 0.0)
    elif zdot0 != 0.0:
        def event(t, y):
            return y[0] - z0

        event.direction = math.copysign(1.0, zdot0)
        period = _first_event(fun, y0, event, 20.0, 1e-8)
    else:
        def event(t, y):
            return y[1]

        event.direction = -math.copysign(1.0, spec.driver_force(z0))
        period = _first_event(fun, y0, event, 20.0, 1e-8)
    sol = solve_ivp(fun, (0.0, period), y0, method="DOP853", rtol=1e-13, atol=1e-13, dense_output=True).sol
    return DriverOrbit(spec, float(z0), float(zdot0), float(period), regime, sol)


def driver_period(spec: SystemSpec, z0: float, zdot0: float) -> float:
    """First return time of the driver to its initial section."""
    return driver_orbit(spec, z0, zdot0).period


# -- Lie group logarithms ----------------------------------------------------


def group_tag(spec: SystemSpec) -> str:
    m = spec.m
    has_force = bool(np.any(spec.force_offset != 0.0))
    if m == 0:
        return "R" if has_force else "trivial"
    if has_force:
        return "SE"
    return {1: "SO2", 2: "SO3"}.get(m, f"SO{m + 1}")


def _so_log(rot: np.ndarray) -> np.ndarray:
    n = rot.shape[0]
    if n == 1:
        return np.zeros((1, 1))
    if n == 2:
        theta = math.atan2(rot[1, 0] - rot[0, 1], rot[0, 0] + rot[1, 1])
        _check_branch(theta)
        return np.array([[0.0, -theta], [theta, 0.0]])
    if n == 3:
        skew = 0.5 * (rot - rot.T)
        s = math.sqrt(skew[2, 1] ** 2 + skew[0, 2] ** 2 + skew[1, 0] ** 2)
        c = 0.5 * (np.trace(rot) - 1.0)
        theta = math.atan2(s, c)
        _check_branch(theta)
        if s < 1e-12:
            return skew
        return (theta / s) * skew
    raise NotImplementedError("closed-form logarithm only for SO(n), n <= 3")


def _check_branch(theta):
    if abs(theta) >= math.pi - 1e-6:
        raise BranchError(f"rotation angle {theta:.6f} too close to pi for a principal logarithm")


def _left_jacobian(omega: np.ndarray) -> np.ndarray:
    n = omega.shape[0]
    theta = math.sqrt(0.5 * float(np.sum(omega * omega)))
    if theta < 1e-8:
        return np.eye(n) + 0.5 * omega + omega @ omega / 6.0
    return (np.eye(n) + (1.0 - math.cos(theta)) / theta**2 * omega
            + (theta - math.sin(theta)) / theta**3 * (omega @ omega))


def average_matrix(phi: np.ndarray, tag: str) -> np.ndarray:
    """Principal logarithm of a monodromy matrix in the affine group ``SO(m+1) x| R^(m+1)``."""
    phi = np.asarray(phi, dtype=float)
    n1 = phi.shape[0] - 1
    out = np.zeros_like(phi)
    if tag == "trivial":
        return out
    omega = _so_log(phi[:n1, :n1])
    out[:n1, :n1] = omega
    if tag in ("R", "SE"):
        out[:n1, n1] = np.linalg.solve(_left_jacobian(omega), phi[:n1, n1])
    return out


def rotation_axis(abar: np.ndarray) -> Optional[np.ndarray]:
    """Unit axis of the 3x3 rotation block of ``abar``; ``None`` when degenerate."""
    if abar.shape[0] < 4:
        return None
    omega = abar[:3, :3]
    w = np.array([omega[2, 1], omega[0, 2], omega[1, 0]])
    nrm = np.linalg.norm(w)
    if nrm < 1e-10:
        return None
    w = w / nrm
    return w if w[np.argmax(np.abs(w))] > 0 else -w


# -- monodromy and averaging -------------------------------------------------


@dataclass
class MonodromyResult:
    period: float
    monodromy: np.ndarray
    average: np.ndarray
    group_tag: str
    axis: Optional[np.ndarray]
    orbit: DriverOrbit = field(repr=False)
    flow_sol: object = field(repr=False, default=None)

    def flow(self, t: float) -> np.ndarray:
        """Fundamental matrix at time ``t``; extended beyond ``2T`` by the Floquet relation."""
        size = self.monodromy.shape[0]
        n = max(0, math.floor(t / self.period) - 1)
        base = self.flow_sol(t - n * self.period)[2:].reshape(size, size)
        return base @ np.linalg.matrix_power(self.monodromy, n) if n else base

    @property
    def frequency(self) -> float:
        return 1.0 / self.period


def monodromy(spec: SystemSpec, z0: float, zdot0: float) -> MonodromyResult:
    """Integrate ``U' = L(z(t)) U`` over a driver period (and a second one for dense output)."""
    orbit = driver_orbit(spec, z0, zdot0)
    size = spec.m + 2

    def fun(t, y):
        mat = reduced_matrix(spec, y[0])
        return np.concatenate([[y[1], -spec.driver_force(y[0])], (mat @ y[2:].reshape(size, size)).ravel()])

    y0 = np.concatenate([[z0, zdot0], np.eye(size).ravel()])
    period = orbit.period
    sol = solve_ivp(fun, (0.0, 2.0 * period), y0, method="DOP853", rtol=ODE_TOL, atol=ODE_TOL,
                    dense_output=True, t_eval=[period])
    phi = sol.y[2:, 0].reshape(size, size)
    tag = group_tag(spec)
    abar = average_matrix(phi, tag)
    axis = rotation_axis(abar) if tag == "SO3" else None
    return MonodromyResult(period, phi, abar, tag, axis, orbit, sol.sol)


def averaging_transform(spec: SystemSpec, mono: MonodromyResult, theta: float, u) -> np.ndarray:
    """``exp(Abar theta) Phi(theta T)^{-1} u``; periodic in ``theta`` with period one."""
    phi = mono.flow(theta * mono.period)
    return expm(mono.average * theta) @ np.linalg.solve(phi, np.asarray(u, dtype=float))


def latitude(rstate: ReducedState, axis: np.ndarray) -> float:
    return float(axis @ np.append(rstate.y, rstate.v))


# -- sections ----------------------------------------------------------------


@dataclass
class SectionSeries:
    times: np.ndarray
    y: np.ndarray
    v: np.ndarray
    z: np.ndarray
    zdot: np.ndarray

    def __len__(self):
        return len(self.times)

    def reduced(self, i: int) -> ReducedState:
        return ReducedState(self.y[i], float(self.v[i]), float(self.z[i]), float(self.zdot[i]))

    @property
    def u(self) -> np.ndarray:
        """Rows ``(y, v)`` per sample."""
        return np.column_stack([self.y, self.v])


def section_crossings(z: np.ndarray, zdot: np.ndarray, regime: str):
    """Indices ``k`` and fractions ``s`` such that the section is hit at ``z[k] + s (z[k+1]-z[k])``.

    The section is the initial driver state: ``z = z[0]`` crossed with the initial
    sign of ``zdot`` (oscillating), or ``z = z[0] mod 2 pi`` (rotating).
    """
    z = np.asarray(z)
    direction = 1.0 if zdot[0] >= 0 else -1.0
    s = direction * (z - z[0])
    if regime == "rotating":
        wind = np.floor(s / TWO_PI + 1e-12)
        idx = np.nonzero(wind[1:] > wind[:-1])[0]
        level = wind[idx + 1] * TWO_PI
    else:
        idx = np.nonzero((s[:-1] < 0.0) & (s[1:] >= 0.0) & (direction * np.asarray(zdot)[1:] > 0))[0]
        level = np.zeros(len(idx))
    frac = (level - s[idx]) / (s[idx + 1] - s[idx])
    return idx, frac


def poincare_sections(traj: Trajectory, spec: SystemSpec, regime: Optional[str] = None) -> SectionSeries:
    """Reduced states at successive driver returns, the initial state included."""
    if regime is None:
        regime = driver_regime(spec, traj.z[0], traj.zdot[0])
    idx, frac = section_crossings(traj.z, traj.zdot, regime)
    if len(idx) < 1:
        log.warning("fewer than 2 section samples; empty series")
        return SectionSeries(np.empty(0), np.empty((0, spec.m)), np.empty(0), np.empty(0), np.empty(0))
    khat = spec.stiffness_factor

    def reduce(i):
        k = kernel_vector(spec, traj.z[i])
        return np.append(khat @ traj.x[i], traj.xdot[i] @ k)

    rows = [np.append(reduce(0), [traj.times[0], traj.z[0], traj.zdot[0]])]
    for i, s in zip(idx, frac):
        a = np.append(reduce(i), [traj.times[i], traj.z[i], traj.zdot[i]])
        b = np.append(reduce(i + 1), [traj.times[i + 1], traj.z[i + 1], traj.zdot[i + 1]])
        rows.append((1.0 - s) * a + s * b)
    arr = np.array(rows)
    m = spec.m
    return SectionSeries(arr[:, m + 1], arr[:, :m], arr[:, m], arr[:, m + 2], arr[:, m + 3])


# -- reversibility -----------------------------------------------------------


@dataclass(frozen=True)
class ReversibilityReport:
    residual: float
    origin: float
    passed: bool
    rho: np.ndarray


def rho_matrix(spec: SystemSpec, rho_tag: str, regime: str = "oscillating") -> np.ndarray:
    """Involution on ``(y, v, eps_coord)``.

    For a rotating driver the phase reversal of a single orbit needs ``z -> -z``;
    its induced action on ``y`` (through ``spec.mirror``) is folded into ``rho``.
    """
    m = spec.m
    rho = np.eye(m + 2)
    if rho_tag == "flip_v":
        rho[m, m] = -1.0
    elif rho_tag != "identity_v":
        raise ValueError(f"unknown rho tag {rho_tag!r}")
    if regime == "rotating" and spec.mirror is not None and m:
        khat = spec.stiffness_factor
        rho[:m, :m] = khat @ np.diag(spec.mirror) @ np.linalg.pinv(khat)
    return rho


def _symmetry_candidates(orbit: DriverOrbit):
    """Times in one period where the driver passes a natural symmetry point."""
    ts = np.linspace(0.0, orbit.period, 4097)
    found = [0.0]
    funcs = [lambda t: orbit(t)[1]]
    for c in (0.0, 0.5 * math.pi, math.pi, 1.5 * math.pi):
        funcs.append(lambda t, c=c: math.sin(orbit.z(t) - c))
    for f in funcs:
        vals = np.array([f(t) for t in ts])
        for j in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
            found.append(brentq(f, ts[j], ts[j + 1], xtol=1e-15))
        found.extend(ts[np.nonzero(vals == 0.0)[0]].tolist())
    return sorted(set(found))


def check_field_reversibility(spec: SystemSpec, rho_tag: str, samples: int = 64,
                              z0: float = 0.0, zdot0: float = 1.0, tol: float = 1e-8) -> ReversibilityReport:
    """Test ``rho L(t0+s) rho = -L(t0-s)`` along the driver orbit for some phase origin ``t0``."""
    orbit = driver_orbit(spec, z0, zdot0)
    rho = rho_matrix(spec, rho_tag, orbit.regime)
    offsets = np.linspace(0.0, orbit.period, samples, endpoint=False)
    best = (math.inf, 0.0)
    for t0 in _symmetry_candidates(orbit):
        worst = 0.0
        for s in offsets:
            lp = reduced_matrix(spec, orbit.z(t0 + s))
            lm = reduced_matrix(spec, orbit.z(t0 - s))
            worst = max(worst, float(np.linalg.norm(rho @ lp @ rho + lm)))
            if worst > best[0]:
                break
        if worst < best[0]:
            best = (worst, t0)
    return ReversibilityReport(best[0], best[1], best[0] <= tol, rho)


def check_integrator_reversibility(spec: SystemSpec, stepper: StepperKind, state, h: float,
                                   settings: SolverSettings = DEFAULT_SETTINGS) -> float:
    """``|| R(Phi_h(R(Phi_h(state)))) - state ||`` with ``R`` the stepper's time-reversal map."""
    one = stepper.step(spec, state, h, settings).state
    back = stepper.reverse(stepper.step(spec, stepper.reverse(one, h), h, settings).state, h)
    return float(np.linalg.norm(np.concatenate([back.q - state.q, back.qdot - state.qdot])))


def check_descent(spec: SystemSpec, stepper: StepperKind, state_a, state_b, h: float,
                  settings: SolverSettings = DEFAULT_SETTINGS) -> float:
    """Difference of the reduced images after one step from two states in the same fibre."""
    from .dynamics import project_reduced

    ra = project_reduced(spec, stepper.step(spec, state_a, h, settings).state)
    rb = project_reduced(spec, stepper.step(spec, state_b, h, settings).state)
    return float(np.linalg.norm(np.append(ra.y - rb.y, [ra.v - rb.v, ra.z - rb.z, ra.zdot - rb.zdot])))


# -- drift -------------------------------------------------------------------


@dataclass(frozen=True)
class DriftReport:
    name: str
    times: np.ndarray = field(repr=False)
    errors: np.ndarray = field(repr=False)
    slope: float
    early_max: float
    classification: str
    drift_factor: float
    floor: float

    @property
    def bounded(self) -> bool:
        return self.classification == "bounded"


def drift_report(times, series, name: str = "", drift_factor: float = DRIFT_FACTOR, floor: float = DRIFT_FLOOR,
                 early_fraction: float = 0.1) -> DriftReport:
    """Classify an invariant's error ``|I(t) - I(0)|`` as ``bounded`` or ``drift``."""
    t = np.asarray(times, dtype=float)
    vals = np.asarray(series, dtype=float)
    if len(t) < 10:
        raise ValueError("drift_report needs at least 10 samples")
    err = np.abs(vals - vals[0])
    slope = float(np.polyfit(t, err, 1)[0])
    n_early = max(1, int(early_fraction * len(t)))
    early = float(err[:n_early].max())
    span = float(t[-1] - t[0])
    growth = slope * span
    drift = growth > drift_factor * early and growth > floor * (1.0 + abs(vals[0]))
    return DriftReport(name, t, err, slope, early, "drift" if drift else "bounded", drift_factor, floor)
