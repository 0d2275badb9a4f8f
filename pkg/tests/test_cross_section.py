"""
Unit tests for transverse spectra and pencil points
"""

import re

import numpy as np
import pytest

from waveguide_scattering.errors import ResolutionError, ThresholdCollisionError
from waveguide_scattering.modes.cross_section import (
    BoundaryKind,
    CrossSectionSpec,
    arm_thresholds,
    longitudinal_wavenumber,
    pencil_spectrum,
    transverse_operator,
    transverse_spectrum,
)

H = 1 / 32


def neumann(width=1.0, profile=None):
    return CrossSectionSpec(0, width, BoundaryKind.NEUMANN, profile)


def dirichlet(width=1.0):
    return CrossSectionSpec(0, width, BoundaryKind.DIRICHLET)


def check_orthonormal(spectrum):
    gram = spectrum.grid_step * spectrum.phi @ spectrum.phi.T
    assert np.allclose(gram, np.eye(len(spectrum)), atol=1e-12)


def test_neumann_spectrum():
    """
    Unit test for the closed-form Neumann eigenpairs cos(n pi y)
    """
    spectrum = transverse_spectrum(neumann(), 3, H)
    assert np.allclose(spectrum.mu, [0, np.pi**2, 4 * np.pi**2], rtol=1e-14, atol=1e-14)
    y = spectrum.y
    assert np.allclose(spectrum.phi[0], 1.0)
    assert np.allclose(spectrum.phi[1], np.sqrt(2) * np.cos(np.pi * y))
    assert np.allclose(spectrum.phi[2], np.sqrt(2) * np.cos(2 * np.pi * y))
    check_orthonormal(spectrum)


def test_dirichlet_spectrum():
    spectrum = transverse_spectrum(dirichlet(), 2, H)
    assert np.allclose(spectrum.mu, [np.pi**2, 4 * np.pi**2], rtol=1e-14)
    assert np.allclose(spectrum.phi[0], np.sqrt(2) * np.sin(np.pi * spectrum.y))
    check_orthonormal(spectrum)


def test_discrete_eigenvalues_match_the_stencil():
    """
    The sampled eigenfunctions are exact eigenvectors of the 3-point scheme
    """
    for section in (neumann(), dirichlet()):
        spectrum = transverse_spectrum(section, 3, H, discrete=True)
        A = transverse_operator(section, H)
        for mu, phi in spectrum.entries:
            assert np.max(np.abs(A @ phi - mu * phi)) < 1e-8 * max(1.0, mu)


def test_profile_matches_dense_eigensolve():
    y = np.linspace(0, 1, 1001)
    section = neumann(profile=0.1 * np.sin(np.pi * y))
    spectrum = transverse_spectrum(section, 1, H)
    dense = np.linalg.eigvalsh(transverse_operator(section, H))
    assert abs(spectrum.mu[0] - dense[0]) <= 1e-8 * max(1.0, abs(dense[0]))
    # the profile lowers the constant mode by roughly its mean
    assert -0.1 < spectrum.mu[0] < -0.03
    check_orthonormal(spectrum)


def test_profile_residual():
    y = np.linspace(0, 1, 201)
    section = neumann(profile=0.5 * y**2)
    spectrum = transverse_spectrum(section, 3, H)
    A = transverse_operator(section, H)
    for mu, phi in spectrum.entries:
        assert np.sqrt(H * np.sum((A @ phi - mu * phi) ** 2)) <= 1e-8 * max(1.0, abs(mu))


def test_grid_too_coarse():
    with pytest.raises(ResolutionError, match="Grid too coarse"):
        transverse_spectrum(neumann(), 4, 1 / 8)
    with pytest.raises(ResolutionError, match=re.escape("Cannot compute 9 modes")):
        transverse_spectrum(neumann(), 9, 1 / 8, check_resolution=False)


def test_bad_sections():
    with pytest.raises(ValueError, match="width must be positive"):
        CrossSectionSpec(0, 0.0)
    with pytest.raises(ValueError, match="boundary_kind must be"):
        CrossSectionSpec(0, 1.0, "robin")
    with pytest.raises(ValueError, match="does not divide width"):
        neumann().grid_points(0.3)
    assert CrossSectionSpec(0, 1.0, " Dirichlet ").boundary_kind is BoundaryKind.DIRICHLET


def test_pencil_propagating_and_evanescent():
    """
    Unit test for k = 2.5, beta = 4 on a Neumann strip
    """
    pencil = pencil_spectrum(transverse_spectrum(neumann(), 3, H), 2.5, 4.0)
    lams = [p.lam for p in pencil.points]
    kappa = np.sqrt(np.pi**2 - 6.25)
    assert len(lams) == 4
    assert np.allclose(lams[:2], [2.5, -2.5])
    assert np.allclose(lams[2:], [1j * kappa, -1j * kappa])
    assert abs(kappa - 1.9025) < 1e-4
    assert not pencil.has_threshold
    assert pencil.algebraic_multiplicity() == 4
    assert pencil.mode_count(1.0) == 1
    assert [p.is_propagating for p in pencil.points] == [True, True, False, False]


def test_pencil_points_solve_the_limit_operator():
    spectrum = transverse_spectrum(neumann(), 3, H, discrete=True)
    A = transverse_operator(neumann(), H)
    pencil = pencil_spectrum(spectrum, 2.5, 4.0)
    for p in pencil.points:
        residual = A @ p.phi - (2.5**2 - p.lam**2) * p.phi
        assert np.max(np.abs(residual)) < 1e-10 * 2.5**2


def test_pencil_at_threshold():
    pencil = pencil_spectrum(transverse_spectrum(neumann(), 3, H), np.pi, 1.0)
    assert pencil.threshold_flags == (False, True, False)
    threshold = [p for p in pencil.points if p.is_threshold]
    assert len(threshold) == 1
    assert threshold[0].lam == 0
    assert threshold[0].chain_length == 2
    assert threshold[0].transverse_index == 1
    assert pencil.algebraic_multiplicity() == 4


def test_pencil_dirichlet_below_cutoff():
    pencil = pencil_spectrum(transverse_spectrum(dirichlet(), 2, H), 2.0, 3.0)
    assert pencil.real_points == []
    assert len(pencil.points) == 2
    assert abs(pencil.points[0].lam - 2.4227j) < 1e-4
    assert pencil.points[1].lam == -pencil.points[0].lam
    assert pencil.mode_count(1.0) == 0


def test_rate_line_collision():
    spectrum = transverse_spectrum(neumann(), 3, H)
    kappa = np.sqrt(np.pi**2 - 2.5**2)
    with pytest.raises(ThresholdCollisionError, match="passes through the pencil point") as e:
        pencil_spectrum(spectrum, 2.5, kappa)
    assert abs(e.value.mu - np.pi**2) < 1e-12


def test_all_modes_inside_strip():
    spectrum = transverse_spectrum(neumann(), 2, H)
    with pytest.raises(ResolutionError, match="increase the mode count"):
        pencil_spectrum(spectrum, 2.5, 10.0)


def test_bad_pencil_arguments():
    spectrum = transverse_spectrum(neumann(), 3, H)
    with pytest.raises(ValueError, match="k must be positive"):
        pencil_spectrum(spectrum, 0.0, 1.0)
    with pytest.raises(ValueError, match="beta must be positive"):
        pencil_spectrum(spectrum, 1.0, -1.0)


def test_conjugation_symmetry_and_mode_count():
    """
    Points come in pairs lam, conj(lam) or -lam, and the number of real points grows with k
    """
    spectrum = transverse_spectrum(neumann(), 6, H)
    previous = 0
    for k in np.linspace(0.5, 9.0, 23):
        pencil = pencil_spectrum(spectrum, k, 4.0)
        lams = [p.lam for p in pencil.points]
        assert pencil.algebraic_multiplicity() % 2 == 0
        for lam in lams:
            assert any(abs(other - np.conj(lam)) < 1e-12 or abs(other + lam) < 1e-12 for other in lams)
        real = len(pencil.real_points)
        assert real >= previous
        previous = real


def test_discrete_wavenumber():
    h = 0.05
    lam = longitudinal_wavenumber(0.0, 2.5, h)
    assert abs(np.cos(lam.real * h) - (1 - h * h * 6.25 / 2)) < 1e-14
    assert abs(lam - 2.5) < 1e-2
    evanescent = longitudinal_wavenumber(np.pi**2, 2.5, h)
    assert evanescent.real == 0
    assert abs(np.cosh(evanescent.imag * h) - (1 - h * h * (6.25 - np.pi**2) / 2)) < 1e-13
    with pytest.raises(ResolutionError):
        longitudinal_wavenumber(0.0, 100.0, 0.1)


def test_arm_thresholds():
    thresholds = arm_thresholds(dirichlet(2.0), 3, 1 / 16)
    assert np.allclose(thresholds, [np.pi / 2, np.pi, 3 * np.pi / 2])
    discrete = arm_thresholds(dirichlet(2.0), 3, 1 / 16, discrete=True)
    assert np.all(discrete < thresholds)
