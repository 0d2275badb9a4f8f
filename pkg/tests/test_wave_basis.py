"""
Unit tests for power-exponential waves, the flux form and normalized bases
"""

import re

import numpy as np
import pytest

from waveguide_scattering.errors import BasisError
from waveguide_scattering.modes.cross_section import CrossSectionSpec, pencil_spectrum, transverse_spectrum
from waveguide_scattering.modes.wave_basis import (
    Direction,
    GridField,
    augmented_pairs,
    classify,
    combine,
    flux_dual_pair,
    flux_pairing,
    limit_residual,
    make_wave,
    normalize_basis,
    pairing_matrix,
    waves_in_strip,
)

H = 1 / 32


def pencil_at(k, beta, mesh_step=None, count=4):
    spectrum = transverse_spectrum(CrossSectionSpec(0, 1.0), count, H, discrete=mesh_step is not None)
    return pencil_spectrum(spectrum, k, beta, mesh_step=mesh_step)


def point_with(pencil, lam):
    return next(p for p in pencil.points if abs(p.lam - lam) < 1e-6)


def test_plane_wave():
    pencil = pencil_at(2.5, 4.0)
    wave = make_wave(pencil.points[0])
    t = np.linspace(0, 3, 7)
    assert np.allclose(wave.values(t), np.outer(pencil.points[0].phi, np.exp(2.5j * t)))
    assert wave.direction is Direction.OUTGOING
    assert make_wave(pencil.points[1]).direction is Direction.INCOMING
    assert limit_residual(wave, 2.5, t) < 1e-10


def test_decaying_wave():
    pencil = pencil_at(2.5, 4.0)
    kappa = np.sqrt(np.pi**2 - 6.25)
    wave = make_wave(point_with(pencil, 1j * kappa))
    t = np.array([0.0, 1.0, 2.0])
    assert np.allclose(wave.values(t), np.outer(wave.phi, np.exp(-kappa * t)))
    assert wave.direction is Direction.UNCLASSIFIED
    assert limit_residual(wave, 2.5, t) < 1e-10


def test_threshold_chain():
    """
    At k = pi the second member of the chain grows linearly and still solves the limit problem
    """
    pencil = pencil_at(np.pi, 1.0)
    point = next(p for p in pencil.points if p.is_threshold)
    constant, linear = make_wave(point, (0, 0)), make_wave(point, (1, 0))
    t = np.array([0.5, 1.5, 4.0])
    assert np.allclose(linear.values(t), np.outer(point.phi, 1j * t))
    for wave in (constant, linear):
        assert limit_residual(wave, np.pi, t) < 1e-10
    with pytest.raises(ValueError, match=re.escape("Chain indices (2, 0) are invalid")):
        make_wave(point, (2, 0))


def test_flux_of_normalized_plane_wave():
    pencil = pencil_at(2.5, 4.0)
    u = make_wave(pencil.points[0]).scaled(1 / np.sqrt(2 * 2.5))
    q = flux_pairing(u, u, 2.0)
    assert abs(q.value - 1j) < 1e-12
    assert q.quadrature_residual < 1e-12
    assert classify(u) is Direction.OUTGOING
    assert classify(make_wave(pencil.points[1])) is Direction.INCOMING


def test_decaying_waves_carry_no_flux():
    pencil = pencil_at(2.5, 4.0)
    decaying = make_wave(point_with(pencil, 1j * np.sqrt(np.pi**2 - 6.25)))
    assert abs(flux_pairing(decaying, decaying, 1.0).value) < 1e-12
    assert classify(decaying) is Direction.UNCLASSIFIED


def test_flux_antisymmetry_on_grid_fields():
    rng = np.random.default_rng(3)
    for _ in range(100):
        shape = (8, 12)
        u = GridField(0, 0.0, 0.1, rng.normal(size=shape) + 1j * rng.normal(size=shape), 0.125)
        v = GridField(0, 0.0, 0.1, rng.normal(size=shape) + 1j * rng.normal(size=shape), 0.125)
        for mesh_step in (None, 0.1):
            quv = flux_pairing(u, v, 0.3, mesh_step).value
            qvu = flux_pairing(v, u, 0.3, mesh_step).value
            assert abs(quv + np.conj(qvu)) < 1e-12


def full_basis():
    """
    Normalized propagating waves plus the augmented pair of the first evanescent mode,
    for Neumann width 1 at k = 2.5 and beta = 4, ordered incoming then outgoing
    """
    pencil = pencil_at(2.5, 4.0)
    basis = normalize_basis(waves_in_strip(pencil, 1.0))
    kappa = np.sqrt(np.pi**2 - 6.25)
    decaying = make_wave(point_with(pencil, 1j * kappa))
    growing = make_wave(point_with(pencil, -1j * kappa))
    incoming, outgoing = augmented_pairs(*flux_dual_pair(decaying, growing))
    return [*basis.incoming, incoming, *basis.outgoing, outgoing]


def test_full_block_pairing_matrix():
    waves = full_basis()
    assert len(waves) == 4
    for R in (0.5, 2.0):
        G = pairing_matrix(waves, waves, R)
        assert np.allclose(G, np.diag([-1j, -1j, 1j, 1j]), atol=1e-8), f"R={R}"


def test_flux_of_random_combinations():
    """
    100 random combinations of the full basis: antisymmetry and independence of the cross-section
    """
    waves = full_basis()
    rng = np.random.default_rng(17)
    for draw in range(100):
        cu = rng.normal(size=4) + 1j * rng.normal(size=4)
        cv = rng.normal(size=4) + 1j * rng.normal(size=4)
        u, v = combine(list(zip(cu, waves))), combine(list(zip(cv, waves)))
        scale = np.sum(np.abs(cu)) * np.sum(np.abs(cv))
        quv = flux_pairing(u, v, 0.5).value
        assert abs(quv + np.conj(flux_pairing(v, u, 0.5).value)) <= 1e-12 * scale, f"draw {draw}"
        assert abs(quv - flux_pairing(u, v, 1.5).value) <= 1e-6 * scale, f"draw {draw}"


def test_flux_position_independence():
    """
    Pairings of two solutions do not depend on the cross-section, continuous or discrete
    """
    for mesh_step in (None, 0.05):
        pencil = pencil_at(2.5, 4.0, mesh_step)
        waves = waves_in_strip(pencil, 4.0)
        for u in waves:
            for v in waves:
                q1 = flux_pairing(u, v, 1.0).value
                q2 = flux_pairing(u, v, 2.5).value
                assert abs(q1 - q2) <= 1e-8 * max(1.0, abs(q1))


def test_flux_errors():
    pencil = pencil_at(2.5, 4.0)
    u = make_wave(pencil.points[0])
    other_arm = GridField(1, 0.0, 0.1, np.zeros((32, 10)), H)
    with pytest.raises(ValueError, match="different arms"):
        flux_pairing(u, other_arm)
    field = GridField(0, 0.0, 0.1, np.zeros((32, 10)), H)
    with pytest.raises(ValueError, match="outside the support"):
        flux_pairing(u, field, 5.0)


def test_normalize_single_pair():
    pencil = pencil_at(2.5, 4.0)
    basis = normalize_basis(waves_in_strip(pencil, 1.0))
    assert basis.M == 1
    assert basis.canonical_deviation() < 1e-12
    u_in, u_out = basis.incoming[0], basis.outgoing[0]
    assert u_in.direction is Direction.INCOMING
    assert u_out.direction is Direction.OUTGOING
    t = np.array([0.0, 0.7])
    expected = np.outer(pencil.points[0].phi, np.exp(2.5j * t)) / np.sqrt(5.0)
    values = u_out.values(t)
    phase = values[0, 0] / expected[0, 0]
    assert abs(abs(phase) - 1) < 1e-12
    assert np.allclose(values, phase * expected)


def test_normalize_empty_strip():
    spectrum = transverse_spectrum(CrossSectionSpec(0, 1.0, "dirichlet"), 3, H)
    basis = normalize_basis(waves_in_strip(pencil_spectrum(spectrum, 2.0, 3.0), 0.5))
    assert basis.M == 0
    assert basis.canonical_deviation() == 0.0


def test_normalize_threshold_chain():
    """
    At a threshold the chain (phi, i t phi) gives one incoming and one outgoing wave
    """
    pencil = pencil_at(np.pi, 1.0)
    waves = waves_in_strip(pencil, 1.0)
    assert len(waves) == 4
    basis = normalize_basis(waves)
    assert basis.M == 2
    assert basis.canonical_deviation() < 1e-10
    threshold_out = [w for w in basis.outgoing if w.transverse_index == 1]
    assert len(threshold_out) == 1
    assert abs(flux_pairing(threshold_out[0], threshold_out[0], 1.0).value - 1j) < 1e-10


def test_normalize_on_a_mesh():
    pencil = pencil_at(2.5, 4.0, mesh_step=0.05)
    basis = normalize_basis(waves_in_strip(pencil, 1.0))
    assert basis.M == 1
    assert basis.canonical_deviation() < 1e-10
    assert basis.canonical_deviation(R=3.0) < 1e-10


def test_singular_pairing_matrix():
    pencil = pencil_at(2.5, 4.0)
    decaying = make_wave(point_with(pencil, 1j * np.sqrt(np.pi**2 - 6.25)))
    with pytest.raises(BasisError, match="singular"):
        normalize_basis([decaying])


def test_augmented_pairs():
    pencil = pencil_at(2.5, 4.0)
    kappa = np.sqrt(np.pi**2 - 6.25)
    decaying = make_wave(point_with(pencil, 1j * kappa))
    growing = make_wave(point_with(pencil, -1j * kappa))
    w_nu, w_minus_nu = flux_dual_pair(decaying, growing)
    assert abs(flux_pairing(w_nu, w_minus_nu).value - 1j) < 1e-10

    incoming, outgoing = augmented_pairs(w_nu, w_minus_nu)
    G = pairing_matrix([incoming, outgoing], [incoming, outgoing])
    assert np.allclose(G, np.diag([-1j, 1j]), atol=1e-10)
    assert classify(incoming) is Direction.INCOMING
    assert classify(outgoing) is Direction.OUTGOING

    t = np.array([0.0, 1.0])
    total = combine([(1, incoming), (1, outgoing)])
    assert np.allclose(total.values(t), np.sqrt(2) * w_nu.values(t))


def test_augmented_pairs_of_distinct_modes_do_not_pair():
    spectrum = transverse_spectrum(CrossSectionSpec(0, 1.0), 4, H)
    pencil = pencil_spectrum(spectrum, 2.5, 7.0)
    combos = []
    for index in (1, 2):
        decaying = next(p for p in pencil.points if p.transverse_index == index and p.lam.imag > 0)
        growing = next(p for p in pencil.points if p.transverse_index == index and p.lam.imag < 0)
        combos.append(augmented_pairs(*flux_dual_pair(make_wave(decaying), make_wave(growing))))
    for first in combos[0]:
        for second in combos[1]:
            assert abs(flux_pairing(first, second).value) < 1e-6


def test_augmented_pairs_need_flux_dual_inputs():
    pencil = pencil_at(2.5, 4.0)
    kappa = np.sqrt(np.pi**2 - 6.25)
    decaying = make_wave(point_with(pencil, 1j * kappa))
    growing = make_wave(point_with(pencil, -1j * kappa))
    with pytest.raises(BasisError, match="not flux-dual"):
        augmented_pairs(decaying, growing)
