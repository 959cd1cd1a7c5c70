"""Quick verification suite behind ``nhcoupled check``."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, List

import numpy as np
from scipy.linalg import expm

from .analysis import check_field_reversibility, check_integrator_reversibility, monodromy
from .dynamics import admissible_state
from .integrators import BENCHMARK_METHODS, SolverSettings, StepperKind, integrate
from .model import SYSTEM_IDS, catalog

# (x0, z0, v0, zdot0) used by the checks for each catalog system
DEFAULT_DATA = {
    "cvt_harmonic": ((1.0, 1.0), 0.0, 0.5, 1.0),
    "cvt_pendulum": ((1.0, 1.0), 0.0, 0.0, 1.8973666),
    "nonholonomic_particle": ((1.0, 1.0), 0.0, 0.5, 1.0),
    "knife_edge": ((0.0, 0.0), math.pi / 2, 0.0, 1.0),
    "vertical_disk": ((0.0, 0.0, 0.0), 0.0, 1.0, 1.0),
    "mobile_robot": ((0.0, 0.0, 0.0), 0.0, 1.0, 1.0),
}


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def default_state(system: str, epsilon: float = 0.0):
    spec = catalog(system, epsilon)
    x0, z0, v0, zd0 = DEFAULT_DATA[system]
    return spec, admissible_state(spec, x0, z0, v0, zd0)


def check_constraints(settings: SolverSettings) -> CheckResult:
    worst = 0.0
    for system in SYSTEM_IDS:
        spec, state = default_state(system)
        for name in BENCHMARK_METHODS:
            stepper = StepperKind.from_name(name)
            for _ in range(20):
                res = stepper.step(spec, state, 0.1, settings)
                worst = max(worst, res.residual)
                state = res.state
            spec, state = default_state(system)
    tol = 1e3 * settings.newton_tol
    return CheckResult("discrete relations", worst <= tol, f"max residual {worst:.2e} (tol {tol:.0e})")


def check_reversibility(settings: SolverSettings) -> CheckResult:
    spec, state = default_state("cvt_harmonic")
    tol = 100.0 * settings.newton_tol
    parts, ok = [], True
    for name in ("dla0.5", "dla01", "lf", "dla0.4"):
        r = check_integrator_reversibility(spec, StepperKind.from_name(name), state, 0.1, settings)
        expect = name != "dla0.4"
        ok &= (r <= max(tol, 1e-9)) if expect else (r >= 1e-4)
        parts.append(f"{name}={r:.1e}")
    return CheckResult("integrator reversibility", ok, " ".join(parts))


def check_dd_energy(settings: SolverSettings, steps: int = 200) -> CheckResult:
    stepper = StepperKind.from_name("dd")
    worst = 0.0
    for system in SYSTEM_IDS:
        spec, state = default_state(system)
        traj = integrate(spec, stepper, state, 0.1, steps * 0.1, settings=settings)
        big_h = traj.invariants(spec)[0]
        worst = max(worst, float(np.max(np.abs(np.diff(big_h)))))
    tol = 10.0 * max(settings.newton_tol, 1e-14)
    return CheckResult("discrete-gradient energy", worst <= tol, f"max |dH| per step {worst:.2e} (tol {tol:.0e})")


def check_knife_driver(settings: SolverSettings) -> CheckResult:
    worst = 0.0
    for eps in (0.0, 0.1):
        spec, state = default_state("knife_edge", eps)
        for name in BENCHMARK_METHODS:
            traj = integrate(spec, StepperKind.from_name(name), state, math.pi / 10, 10.0, settings=settings)
            h = traj.invariants(spec)[1]
            worst = max(worst, float(np.max(np.abs(np.diff(h)))))
    return CheckResult("knife-edge driver energy", worst <= 1e-12, f"max per-step change {worst:.2e}")


def check_monodromy(settings: SolverSettings) -> CheckResult:
    worst = 0.0
    for system in SYSTEM_IDS:
        _, z0, _, zd0 = DEFAULT_DATA[system]
        mono = monodromy(catalog(system), z0, zd0)
        worst = max(worst, float(np.linalg.norm(expm(mono.average) - mono.monodromy)))
    return CheckResult("average matrix", worst <= 1e-8, f"max |exp(Abar) - Phi(T)| {worst:.2e}")


def check_field_symmetry(settings: SolverSettings) -> CheckResult:
    parts, ok = [], True
    for system in SYSTEM_IDS:
        spec = catalog(system)
        _, z0, _, zd0 = DEFAULT_DATA[system]
        rep = check_field_reversibility(spec, spec.rho, z0=z0, zdot0=zd0)
        ok &= rep.passed
        parts.append(f"{system}={rep.residual:.0e}")
    return CheckResult("reduced-field reversibility", ok, " ".join(parts))


CHECKS: List[Callable[[SolverSettings], CheckResult]] = [
    check_constraints,
    check_reversibility,
    check_dd_energy,
    check_knife_driver,
    check_monodromy,
    check_field_symmetry,
]


def run_checks(settings: SolverSettings) -> List[CheckResult]:
    out = []
    for fn in CHECKS:
        try:
            out.append(fn(settings))
        except Exception as exc:  # a crashing check is a failed check
            out.append(CheckResult(fn.__name__, False, f"{type(exc).__name__}: {exc}"))
    return out
