"""
Unit tests for Neumann-series waves of the blended model problem
"""

import numpy as np
import pytest

from waveguide_scattering.errors import ContractionError
from waveguide_scattering.model_problem.blending import ArmCoefficientProfile, blend, smoothstep_cutoff
from waveguide_scattering.model_problem.neumann_series import (
    LimitModeSolver,
    apply_blended,
    chain_wave_set,
    decompose_model_solution,
    expand_in_chain_waves,
    neumann_series_basis,
    neumann_series_wave,
    verify_pairings,
)
from waveguide_scattering.modes.cross_section import CrossSectionSpec, pencil_spectrum, transverse_spectrum
from waveguide_scattering.modes.wave_basis import GridField, normalize_basis, waves_in_strip

DT = 0.02
GAMMA = 1.0


def limit_basis(k=2.5):
    spectrum = transverse_spectrum(CrossSectionSpec(0, 1.0), 4, 1 / 16)
    pencil = pencil_spectrum(spectrum, k, 4.0, mesh_step=DT)
    return spectrum, pencil, normalize_basis(waves_in_strip(pencil, GAMMA))


def test_limit_solver_kinds():
    assert LimitModeSolver(6.25, -1.0, DT).kind == "forward"
    assert LimitModeSolver(6.25, 1.0, DT).kind == "backward"
    assert LimitModeSolver(-4.0, 0.5, DT).kind == "two-sided"


def test_limit_solver_inverts_the_recurrence():
    solver = LimitModeSolver(-4.0, 0.5, DT)
    t = DT * np.arange(400)
    f = np.exp(-((t - 4.0) ** 2))
    c = solver.solve(f)
    second = (c[2:] - 2 * c[1:-1] + c[:-2]) / DT**2
    residual = -second - (-4.0) * c[1:-1] - f[1:-1]
    assert np.max(np.abs(residual)) < 1e-8


def test_zero_perturbation():
    _, _, basis = limit_basis()
    blended = blend(ArmCoefficientProfile(2.5), 20)
    z = neumann_series_wave(blended, basis.outgoing[0], -GAMMA)
    assert z.iterations == 0
    assert np.array_equal(z.profile, z.base_profile)
    assert z.residual < 1e-10


def test_converged_wave():
    """
    Unit test for c = 0.1, delta = 1, T = 20 and a propagating base at k = 2.5
    """
    _, _, basis = limit_basis()
    blended = blend(ArmCoefficientProfile(2.5, 0.1, 1.0), 20)
    z = neumann_series_wave(blended, basis.outgoing[0], -GAMMA)
    assert z.iterations > 0
    assert z.contraction_ratio < 1
    assert z.residual <= 1e-6
    # the correction vanishes where the blended coefficient is the limit one
    before = z.t < blended.T + 1
    assert np.allclose(z.profile[before], z.base_profile[before])
    assert not np.allclose(z.profile, z.base_profile)
    assert np.max(np.abs(apply_blended(z.profile, blended, z.mu, z.t, DT))) < 1e-6


def test_strong_perturbation_does_not_contract():
    _, _, basis = limit_basis()
    blended = blend(ArmCoefficientProfile(2.5, 1000.0, 1.0), 1)
    with pytest.raises(ContractionError, match="T too small"):
        neumann_series_wave(blended, basis.outgoing[0], -GAMMA)


def test_pairings_in_the_limit_case():
    _, _, basis = limit_basis()
    blended = blend(ArmCoefficientProfile(2.5), 20)
    model = neumann_series_basis(blended, basis, GAMMA)
    report = verify_pairings(model.waves, expected=np.diag([-1j, 1j]))
    assert report.max_deviation < 1e-10


def test_pairings_of_perturbed_waves():
    _, _, basis = limit_basis()
    blended = blend(ArmCoefficientProfile(2.5, 0.1, 1.0), 20)
    model = neumann_series_basis(blended, basis, GAMMA)
    report = verify_pairings(model.waves, expected=np.diag([-1j, 1j]))
    assert report.max_deviation <= 1e-5
    near, far = report.positions
    assert near < blended.T < blended.exact_from <= far
    # mixed pairing of z^+ with z^-
    assert abs(report.matrices[1][0, 1]) <= 1e-5


def test_expansion_of_the_basis_itself():
    _, _, basis = limit_basis()
    blended = blend(ArmCoefficientProfile(2.5, 0.1, 1.0), 20)
    model = neumann_series_basis(blended, basis, GAMMA)
    expansion = expand_in_chain_waves(model, [model.incoming[0]])
    assert np.allclose(expansion.a, [[1]], atol=1e-6)
    assert np.allclose(expansion.b, [[0]], atol=1e-6)
    assert expansion.residual < 1e-5


def test_chain_waves_in_a_single_mode_strip():
    _, pencil, basis = limit_basis()
    blended = blend(ArmCoefficientProfile(2.5, 0.1, 1.0), 20)
    model = neumann_series_basis(blended, basis, GAMMA, L=40.0)
    chains = chain_wave_set(blended, pencil, -GAMMA, GAMMA, L=40.0)
    assert len(chains.waves) == 2
    expansion = expand_in_chain_waves(model, chains)
    table = np.hstack([expansion.a, expansion.b])
    assert table.shape == (2, 2)
    assert abs(np.linalg.det(table)) > 1e-3
    assert expansion.residual <= 1e-5


def test_contraction_improves_as_T_moves_out():
    """
    k(t)^2 = 6.25 (1 + 0.1 / (1 + t)) blended at T = 10, 20, 40
    """
    _, pencil, basis = limit_basis()
    profile = ArmCoefficientProfile.relative(2.5, 0.1)
    ratios = []
    for T in (10, 20, 40):
        blended = blend(profile, T)
        model = neumann_series_basis(blended, basis, GAMMA, L=T + 20.0)
        ratios.append(max(z.contraction_ratio for z in model.waves))
    assert all(r < 1 for r in ratios)
    assert ratios[0] >= ratios[1] >= ratios[2]

    assert verify_pairings(model.waves, expected=np.diag([-1j, 1j])).max_deviation <= 1e-5
    chains = chain_wave_set(blended, pencil, -GAMMA, GAMMA, L=T + 20.0)
    assert expand_in_chain_waves(model, chains).residual <= 1e-5


def test_zero_data_decomposition():
    spectrum, _, basis = limit_basis()
    blended = blend(ArmCoefficientProfile(2.5, 0.1, 1.0), 20)
    model = neumann_series_basis(blended, basis, GAMMA)
    z = model.incoming[0]
    rhs = GridField(0, z.t0, z.dt, np.zeros((len(z.phi), len(z.profile))), z.grid_step, z.dt)
    result = decompose_model_solution(blended, rhs, GAMMA, model, spectrum)
    assert np.all(result.a == 0)
    assert np.all(result.b == 0)
    assert result.remainder_norm == 0


def test_mismatched_grids():
    spectrum, _, basis = limit_basis()
    blended = blend(ArmCoefficientProfile(2.5, 0.1, 1.0), 20)
    model = neumann_series_basis(blended, basis, GAMMA)
    rhs = GridField(0, 0.0, DT, np.zeros((16, 10)), 1 / 16, DT)
    with pytest.raises(ValueError, match="same longitudinal grid"):
        decompose_model_solution(blended, rhs, GAMMA, model, spectrum)


def model_rhs(z, profile):
    return GridField(0, z.t0, z.dt, np.outer(z.phi, profile), z.grid_step, z.dt)


def test_decomposition_of_a_cut_off_wave():
    """
    F = L_T((1 - chi) z^+) is solved by -chi z^+, so a = -1, b = 0 and the remainder
    is (1 - chi) z^+, supported on t < 2
    """
    spectrum, _, basis = limit_basis()
    blended = blend(ArmCoefficientProfile(2.5, 0.1, 1.0), 20)
    model = neumann_series_basis(blended, basis, GAMMA)
    z = model.incoming[0]
    local = (1 - smoothstep_cutoff(z.t)) * z.profile
    rhs = model_rhs(z, apply_blended(local, blended, z.mu, z.t, DT))
    result = decompose_model_solution(blended, rhs, GAMMA, model, spectrum)
    assert np.allclose(result.a, [-1], atol=1e-5)
    assert np.allclose(result.b, [0], atol=1e-5)
    assert np.allclose(result.remainder.samples, np.outer(z.phi, local), atol=1e-8)
    assert np.max(np.abs(result.remainder.samples[:, z.t > 2.1])) < 1e-12
    assert np.isfinite(result.remainder_norm)
    assert result.decays
    assert result.consistency < 1e-5


def test_decomposition_of_data_orthogonal_to_the_waves():
    """
    A bump g far from both ends gives F = L_T g with (F, z) = 0 for every wave, so the
    whole solution is the remainder
    """
    spectrum, _, basis = limit_basis()
    blended = blend(ArmCoefficientProfile(2.5, 0.1, 1.0), 20)
    model = neumann_series_basis(blended, basis, GAMMA)
    z = model.incoming[0]
    g = np.exp(-4 * (z.t - 5) ** 2)
    rhs = model_rhs(z, apply_blended(g, blended, z.mu, z.t, DT))
    result = decompose_model_solution(blended, rhs, GAMMA, model, spectrum)
    assert np.max(np.abs(result.a)) < 1e-8
    assert np.max(np.abs(result.b)) < 1e-8
    assert np.allclose(result.remainder.samples, np.outer(z.phi, g), atol=1e-8)
    assert np.allclose(result.solution.samples, result.remainder.samples, atol=1e-8)
    assert result.decays
    assert result.consistency < 1e-5
