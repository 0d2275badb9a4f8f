"""
Unit tests for changes of the outgoing basis and their compatibility pairings
"""

from dataclasses import replace

import numpy as np
import pytest

from waveguide_scattering.junction.geometry import straight_duct, t_junction
from waveguide_scattering.junction.solver import assemble
from waveguide_scattering.scattering.matrices import augmented_S, classical_S, classical_T
from waveguide_scattering.scattering.radiation_basis import radiation_basis_transform


@pytest.fixture(scope="module")
def duct():
    problem = assemble(straight_duct(), 2.5, divisions=16)
    return problem, classical_S(classical_T(problem), problem)


@pytest.fixture(scope="module")
def junction():
    problem = assemble(t_junction(), 2.5, divisions=16)
    return problem, classical_S(classical_T(problem), problem)


def random_unitary(rng, M):
    Q, R = np.linalg.qr(rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M)))
    return Q * (np.diag(R) / np.abs(np.diag(R)))


def test_identity_transform(duct):
    problem, S = duct
    basis = radiation_basis_transform(np.eye(2), None, S, problem)
    assert np.allclose(basis.waves, np.hstack([np.zeros((2, 2)), np.eye(2)]))
    # V_k = X_k
    assert np.allclose(basis.functionals, np.hstack([S.entries, np.eye(2)]))
    assert basis.residual < 1e-6
    assert len(basis.functional_fields) == 2


def test_phase_transform(duct):
    problem, S = duct
    basis = radiation_basis_transform(np.diag(np.exp([0.4j, 2.0j])), np.zeros((2, 2)), S, problem)
    assert basis.residual < 1e-6
    assert np.allclose(basis.pairing, 1j * np.eye(2), atol=1e-6)


def test_random_transforms(junction):
    """
    20 draws on a T-junction, alternating unitary S_op with R_op = 0 and general pairs
    """
    problem, S = junction
    rng = np.random.default_rng(11)
    for draw in range(20):
        if draw % 2 == 0:
            S_op, R_op = random_unitary(rng, 3), None
        else:
            S_op = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3)) + 3 * np.eye(3)
            R_op = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
        basis = radiation_basis_transform(S_op, R_op, S, problem)
        assert basis.M == 3
        assert basis.residual <= 1e-6, f"draw {draw}: pairing residual {basis.residual:.2e}"


def test_pairing_sees_a_wrong_scattering_matrix(junction):
    problem, S = junction
    swap = np.array([[0, 1, 0], [1, 0, 0], [0, 0, 1]])
    wrong = replace(S, entries=S.entries @ swap @ np.diag([1, 1j, 1]))
    basis = radiation_basis_transform(np.eye(3), np.eye(3), wrong, problem)
    assert basis.residual > 1e-3


def test_coefficients_pick_out_the_new_waves(junction):
    problem, S = junction
    rng = np.random.default_rng(5)
    S_op = rng.normal(size=(3, 3)) + 3 * np.eye(3)
    R_op = rng.normal(size=(3, 3))
    basis = radiation_basis_transform(S_op, R_op, S, problem)
    for j, row in enumerate(basis.waves):
        assert np.allclose(basis.coefficients(row[:3], row[3:]), np.eye(3)[j], atol=1e-10)


def test_transform_errors(duct, junction):
    problem, S = duct
    with pytest.raises(ValueError, match="S_op must be 2x2"):
        radiation_basis_transform(np.eye(3), None, S, problem)
    with pytest.raises(ValueError, match="R_op must be 2x2"):
        radiation_basis_transform(np.eye(2), np.eye(3), S, problem)
    with pytest.raises(ValueError, match="S_op is singular"):
        radiation_basis_transform(np.ones((2, 2)), None, S, problem)
    with pytest.raises(ValueError, match="classical scattering matrix"):
        radiation_basis_transform(np.eye(2), None, augmented_S(problem, 4.0), problem)
    with pytest.raises(ValueError, match="needs the junction problem"):
        radiation_basis_transform(np.eye(2), None, S, None)
    with pytest.raises(ValueError, match="has 3"):
        radiation_basis_transform(np.eye(2), None, S, junction[0])
