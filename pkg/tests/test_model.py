import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from nhcoupled.model import (SYSTEM_IDS, CatalogError, FullState, ReducedState, SingularConstraintError,
                             SystemSpec, catalog, kernel_vector, potentials, reduced_matrix)

angles = st.floats(-6.0, 6.0, allow_nan=False)


def test_catalog_has_six_systems():
    assert len(SYSTEM_IDS) == 6
    for name in SYSTEM_IDS:
        spec = catalog(name)
        assert spec.n_x - spec.r == 1
        assert spec.stiffness.shape == (spec.n_x, spec.n_x)


def test_unknown_system():
    with pytest.raises(CatalogError):
        catalog("double_pendulum")


def test_epsilon_ignored_with_warning(caplog):
    spec = catalog("cvt_harmonic", 0.3)
    assert spec.epsilon == 0.0
    assert "ignored" in caplog.text


def test_groups_and_involutions():
    table = {name: (catalog(name).group, catalog(name).rho) for name in SYSTEM_IDS}
    assert table["cvt_harmonic"] == ("SO3", "flip_v")
    assert table["cvt_pendulum"] == ("SO3", "flip_v")
    assert table["nonholonomic_particle"] == ("SO2", "flip_v")
    assert table["knife_edge"] == ("R", "identity_v")
    assert table["vertical_disk"][0] == "trivial"


def test_pendulum_energy_labels():
    # the two initial data sets carry total energies 2.8 and 5.0
    spec = catalog("cvt_pendulum")
    u0 = potentials(spec, [1.0, 1.0], 0.0)[0]
    assert 0.5 * 1.8973666**2 + spec.driver_potential(0.0) + u0 == pytest.approx(2.8, abs=1e-6)
    assert 0.5 * 2.82842712**2 + spec.driver_potential(0.0) + u0 == pytest.approx(5.0, abs=1e-7)


def test_pendulum_potential_values():
    spec = catalog("cvt_pendulum", 0.1)
    assert spec.driver_potential(0.0) == 0.0
    assert spec.driver_potential(math.pi) == pytest.approx(2.0)
    assert spec.driver_potential(math.pi / 4) == pytest.approx(1 - math.sqrt(0.5) - 0.05)


@pytest.mark.parametrize("name", SYSTEM_IDS)
@given(z=angles)
def test_kernel_is_unit_and_annihilated(name, z):
    spec = catalog(name)
    k = kernel_vector(spec, z)
    assert np.linalg.norm(k) == pytest.approx(1.0, abs=1e-14)
    assert np.abs(spec.constraint(z) @ k).max() < 1e-14


@pytest.mark.parametrize("name", SYSTEM_IDS)
@given(z=angles)
def test_closed_form_kernel_matches_svd(name, z):
    spec = catalog(name)
    _, _, vt = np.linalg.svd(spec.constraint(z))
    assert abs(abs(vt[-1] @ kernel_vector(spec, z)) - 1.0) < 1e-12


@pytest.mark.parametrize("eps", [0.0, 0.1])
@given(z=angles, derivative_step=st.just(1e-6))
def test_potential_derivatives(eps, z, derivative_step):
    spec = catalog("cvt_pendulum", eps)
    d = derivative_step
    fd1 = (spec.driver_potential(z + d) - spec.driver_potential(z - d)) / (2 * d)
    fd2 = (spec.driver_force(z + d) - spec.driver_force(z - d)) / (2 * d)
    assert spec.driver_force(z) == pytest.approx(fd1, abs=1e-8)
    assert spec.driver_curvature(z) == pytest.approx(fd2, abs=1e-8)


def test_svd_kernel_sign_follows_previous():
    spec = catalog("knife_edge")
    bare = SystemSpec("bare", 2, 1, 0, spec.constraint, spec.constraint_dz, spec.driver_potential,
                      spec.driver_force, spec.driver_curvature, np.zeros((0, 2)), np.zeros(2))
    prev = kernel_vector(bare, 0.3)
    for z in np.linspace(0.3, 6.0, 50):
        k = kernel_vector(bare, z, previous=prev)
        assert k @ prev > 0
        prev = k


def test_singular_constraint_raises():
    spec = catalog("knife_edge")
    bad = SystemSpec("flat", 2, 1, 0, lambda z: np.zeros((1, 2)), spec.constraint_dz, spec.driver_potential,
                     spec.driver_force, spec.driver_curvature, np.zeros((0, 2)), np.zeros(2))
    with pytest.raises(SingularConstraintError):
        kernel_vector(bad, 0.0)


def test_spec_validation():
    spec = catalog("cvt_harmonic")
    with pytest.raises(ValueError):
        SystemSpec("bad", 3, 1, 0, spec.constraint, spec.constraint_dz, spec.driver_potential,
                   spec.driver_force, spec.driver_curvature, np.zeros((0, 3)), np.zeros(3))


@pytest.mark.parametrize("name", SYSTEM_IDS)
@given(z=angles)
def test_reduced_matrix_structure(name, z):
    spec = catalog(name)
    mat = reduced_matrix(spec, z)
    m = spec.m
    block = mat[: m + 1, : m + 1]
    assert np.allclose(block, -block.T, atol=1e-15)
    assert np.all(mat[m + 1] == 0.0)
    assert np.all(mat[:m, m + 1] == 0.0)


def test_knife_edge_reduced_matrix():
    spec = catalog("knife_edge")
    # v' = cos z for the knife edge
    for z in (0.0, 0.7, 2.0):
        assert reduced_matrix(spec, z)[0, 1] == pytest.approx(math.cos(z))


def test_states():
    s = FullState.from_arrays([1.0, 2.0, 0.5], [0.1, 0.2, 0.3], 1.5)
    assert s.z == 0.5 and s.zdot == 0.3 and s.t == 1.5
    assert np.array_equal(s.q, [1.0, 2.0, 0.5])
    f = s.flipped()
    assert np.array_equal(f.qdot, -s.qdot) and np.array_equal(f.q, s.q)
    r = ReducedState(np.array([1.0, 2.0]), 3.0, 0.0, 1.0)
    assert np.array_equal(r.u, [1.0, 2.0, 3.0, 1.0])
