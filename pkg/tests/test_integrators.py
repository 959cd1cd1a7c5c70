import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nhcoupled.analysis import check_integrator_reversibility
from nhcoupled.checks import default_state
from nhcoupled.dynamics import admissible_state, invariants, project_reduced
from nhcoupled.integrators import (BENCHMARK_METHODS, SolverSettings, StepFailure, StepperKind, Trajectory,
                                   discrete_gradient, integrate, step_count, step_dla, step_reference)
from nhcoupled.model import SYSTEM_IDS, FullState, catalog

from oracle import oracle_step, random_admissible

ORACLE_ARGS = {"dla0.5": ("dla", 0.5), "dla0.4": ("dla", 0.4), "dla01": ("dla01", 0.5), "lf": ("lf", 0.5),
               "dd": ("dd", 0.5)}


def knife_state(eps=0.0):
    spec = catalog("knife_edge", eps)
    return spec, admissible_state(spec, [0.0, 0.0], math.pi / 2, 0.0, 1.0)


@pytest.mark.parametrize("method", BENCHMARK_METHODS)
def test_knife_edge_step_matches_oracle(method):
    spec, s = knife_state()
    res = StepperKind.from_name(method).step(spec, s, math.pi / 10)
    q1, qd1, lam = oracle_step(spec, *ORACLE_ARGS[method][:1], s.q, s.qdot, math.pi / 10,
                               alpha=ORACLE_ARGS[method][1])
    assert np.abs(res.state.q - q1).max() <= 1e-12
    assert np.abs(res.state.qdot - qd1).max() <= 1e-12
    assert np.abs(res.lam - lam).max() <= 1e-12


@pytest.mark.parametrize("name", ["cvt_pendulum", "mobile_robot", "nonholonomic_particle"])
def test_oracle_random_states(name, rng):
    spec = catalog(name, 0.1)
    for _ in range(5):
        s = random_admissible(spec, rng)
        for method, (tag, alpha) in ORACLE_ARGS.items():
            res = StepperKind.from_name(method).step(spec, s, 0.1)
            q1, qd1, _ = oracle_step(spec, tag, s.q, s.qdot, 0.1, alpha)
            assert np.abs(np.concatenate([res.state.q - q1, res.state.qdot - qd1])).max() <= 1e-10


@pytest.mark.parametrize("method", ["dla0.5", "dla0.4", "dla01", "dd"])
def test_fixed_point_at_rest(method):
    spec = catalog("cvt_pendulum")
    s = admissible_state(spec, [0.0, 0.0], 0.0, 0.0, 0.0)
    res = StepperKind.from_name(method).step(spec, s, 0.1)
    assert np.abs(res.state.q).max() < 1e-15 and np.abs(res.state.qdot).max() < 1e-15
    assert np.abs(res.lam).max() < 1e-15


@pytest.mark.parametrize("name", SYSTEM_IDS)
@pytest.mark.parametrize("method", BENCHMARK_METHODS)
def test_discrete_constraint_holds(name, method, rng):
    spec = catalog(name)
    s = random_admissible(spec, rng)
    res = StepperKind.from_name(method).step(spec, s, 0.1)
    q0, qd0, q1, qd1 = s.q, s.qdot, res.state.q, res.state.qdot
    n = spec.n_x
    if method == "lf":
        resid = spec.constraint(q0[n]) @ (qd0[:n] + qd1[:n])
    elif method == "dd":
        resid = spec.constraint(0.5 * (q0[n] + q1[n])) @ (qd0[:n] + qd1[:n]) / 2
    else:
        resid = spec.constraint(q1[n]) @ qd1[:n]
    assert np.abs(resid).max() <= 1e-12


@pytest.mark.parametrize("eps", [0.0, 0.1])
@pytest.mark.parametrize("method", BENCHMARK_METHODS)
def test_driver_exact_on_knife_edge(eps, method):
    spec, s = knife_state(eps)
    traj = integrate(spec, StepperKind.from_name(method), s, math.pi / 10, 20.0)
    assert np.abs(traj.zdot - 1.0).max() <= 1e-12
    assert np.abs(traj.z - (math.pi / 2 + traj.times)).max() <= 1e-12


@pytest.mark.parametrize("method", ["dla0.5", "dla01"])
def test_vertical_disk_speed_constant(method):
    spec, s = default_state("vertical_disk")
    traj = integrate(spec, StepperKind.from_name(method), s, 0.1, 5.0)
    v = [project_reduced(spec, traj.state(i)).v for i in range(len(traj))]
    assert np.ptp(v) < 1e-12


def test_vertical_disk_leapfrog_keeps_velocity():
    # no force and an admissible start: the multiplier vanishes
    spec, s = default_state("vertical_disk")
    res = StepperKind.from_name("lf").step(spec, s, 0.1)
    assert np.array_equal(res.state.xdot, s.xdot) and np.abs(res.lam).max() == 0.0


def test_leapfrog_driver_explicit_on_knife_edge():
    spec, s = knife_state()
    res = StepperKind.from_name("lf").step(spec, s, 0.3)
    assert res.state.z == pytest.approx(s.z + 0.3, abs=1e-15) and res.state.zdot == s.zdot


def test_dd_single_step_energy():
    spec = catalog("cvt_pendulum")
    s = admissible_state(spec, [1.0, 1.0], 0.0, 0.0, 1.8973666)
    new = StepperKind.from_name("dd").step(spec, s, 0.1).state
    assert abs(invariants(spec, new).H_total - invariants(spec, s).H_total) <= 1e-11


def test_dd_knife_edge_no_drift():
    spec, s = knife_state(0.1)
    traj = integrate(spec, StepperKind.from_name("dd"), s, math.pi / 10, 1000 * math.pi / 10)
    big_h = traj.invariants(spec)[0]
    assert np.abs(big_h - big_h[0]).max() <= 1e-9


def test_discrete_gradient_properties(rng):
    spec = catalog("cvt_pendulum", 0.1)
    for _ in range(20):
        q0 = rng.normal(size=3)
        q1 = q0 + 0.3 * rng.normal(size=3)
        g, jac = discrete_gradient(spec, q0, q1)
        total = lambda q: 0.5 * q[:2] @ q[:2] + spec.driver_potential(q[2])
        assert g @ (q1 - q0) == pytest.approx(total(q1) - total(q0), abs=1e-13)
        # Jacobian against central differences in q1
        fd = np.empty((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = 1e-6
            fd[:, j] = (discrete_gradient(spec, q0, q1 + e)[0] - discrete_gradient(spec, q0, q1 - e)[0]) / 2e-6
        assert np.abs(jac - fd).max() < 1e-6
    g, _ = discrete_gradient(spec, q0, q0)
    assert np.allclose(g, np.append(q0[:2], spec.driver_force(q0[2])))


def test_reference_knife_edge_closed_form():
    spec, s = knife_state()
    state = s
    for _ in range(10):
        state = step_reference(spec, state, math.pi / 10, substeps=40)
    assert project_reduced(spec, state).v == pytest.approx(-2.0, abs=1e-8)


def test_reference_order_four():
    spec, s = default_state("cvt_harmonic")
    exact = s
    for _ in range(40):
        exact = step_reference(spec, exact, 0.025, substeps=4)
    errs = []
    for sub in (1, 2):
        st_ = s
        for _ in range(10):
            st_ = step_reference(spec, st_, 0.1, substeps=sub)
        errs.append(np.abs(st_.q - exact.q).max())
    assert math.log2(errs[0] / errs[1]) > 3.5


def test_dla_reversibility_and_its_failure():
    spec, s = default_state("cvt_harmonic")
    assert check_integrator_reversibility(spec, StepperKind.from_name("dla0.5"), s, 0.1) <= 1e-9
    assert check_integrator_reversibility(spec, StepperKind.from_name("dla0.4"), s, 0.1) >= 1e-4


def test_leapfrog_not_reversible_under_plain_flip():
    spec, s = default_state("cvt_harmonic")
    lf = StepperKind.from_name("lf")
    one = lf.step(spec, s, 0.1).state
    back = lf.step(spec, one.flipped(), 0.1).state.flipped()
    assert np.linalg.norm(back.q - s.q) > 1e-4
    assert check_integrator_reversibility(spec, lf, s, 0.1) <= 1e-12


def test_leapfrog_start_is_consistent():
    spec, s = default_state("cvt_pendulum")
    lf = StepperKind.from_name("lf")
    w0 = lf.start(spec, s, 0.1)
    w1 = lf.step(spec, w0, 0.1).state
    assert np.allclose(0.5 * (w0.qdot + w1.qdot), s.qdot, atol=1e-14)


def test_step_count_and_integrate_basics():
    assert step_count(math.pi / 10, 100.0) == 319
    assert step_count(0.1, 3000.0) == 30000
    assert step_count(0.1, 0.0) == 0
    with pytest.raises(ValueError):
        step_count(0.0, 1.0)
    spec, s = knife_state()
    traj = integrate(spec, StepperKind.from_name("dla01"), s, 0.1, 0.0)
    assert len(traj) == 1 and traj.state(0).z == s.z
    seen = []
    integrate(spec, StepperKind.from_name("lf"), s, 0.1, 1.0, observer=lambda k, st_: seen.append(k))
    assert seen == list(range(11))


def test_integrate_deterministic():
    spec, s = default_state("cvt_pendulum")
    a = integrate(spec, StepperKind.from_name("dd"), s, 0.1, 5.0)
    b = integrate(spec, StepperKind.from_name("dd"), s, 0.1, 5.0)
    assert np.array_equal(a.x, b.x) and np.array_equal(a.zdot, b.zdot)


def test_integrate_rejects_inadmissible():
    spec = catalog("cvt_harmonic")
    bad = FullState(np.zeros(2), 0.0, np.array([1.0, 0.0]), 1.0)
    with pytest.raises(ValueError):
        integrate(spec, StepperKind.from_name("dla0.5"), bad, 0.1, 1.0)


def test_newton_failure_reports_step():
    spec, s = default_state("cvt_pendulum")
    tight = SolverSettings(newton_tol=1e-30, newton_max_iter=2)
    with pytest.raises(StepFailure) as info:
        integrate(spec, StepperKind.from_name("dd"), s, 0.1, 1.0, settings=tight)
    assert info.value.step_index == 1
    assert isinstance(info.value.partial, Trajectory) and len(info.value.partial) == 1


def test_settings_validation():
    with pytest.raises(ValueError):
        SolverSettings(newton_tol=0.0)
    with pytest.raises(ValueError):
        StepperKind.from_name("rk45")
    with pytest.raises(ValueError):
        StepperKind("reference", substeps=0)


def test_dla_alpha_bounds():
    spec, s = default_state("cvt_harmonic")
    with pytest.raises(ValueError):
        step_dla(spec, s, 0.1, 1.5)


@given(alpha=st.floats(0.0, 1.0), h=st.floats(0.01, 0.3))
def test_dla_constraint_any_alpha(alpha, h):
    spec, s = default_state("cvt_pendulum")
    res = step_dla(spec, s, h, alpha)
    assert np.abs(spec.constraint(res.state.z) @ res.state.xdot).max() <= 1e-12
