"""
Unit tests for slowly stabilizing coefficients and their blending
"""

import numpy as np
import pytest

from waveguide_scattering.model_problem.blending import ArmCoefficientProfile, blend, smoothstep_cutoff


def test_cutoff():
    x = np.array([-3.0, 0.0, 1.0, 1.5, 2.0, 7.0])
    assert np.allclose(smoothstep_cutoff(x), [0, 0, 0, 0.5, 1, 1])
    s = np.linspace(0, 3, 301)
    assert np.all(np.diff(smoothstep_cutoff(s)) >= 0)


def test_window_algebra():
    """
    Unit test for c = 0.2, delta = 1, T = 10
    """
    blended = blend(ArmCoefficientProfile(2.5, 0.2, 1.0), 10)
    assert blended.coefficient(5.0) == pytest.approx(2.5**2)
    assert blended.coefficient(20.0) == pytest.approx(2.5**2 + 0.2 / 21)
    assert blended.exact_from == 13.0
    assert blended.delta_norm_estimate == pytest.approx(0.2 / 13, rel=1e-3)


def test_zero_perturbation():
    profile = ArmCoefficientProfile(2.5)
    assert profile.is_trivial
    for T in (1, 10, 40):
        blended = blend(profile, T)
        t = np.linspace(0, 100, 11)
        assert np.all(blended.coefficient(t) == 2.5**2)
        assert blended.delta_norm_estimate == 0


def test_sup_tail_decreases():
    profile = ArmCoefficientProfile.relative(2.5, 0.1, 0.5)
    assert profile.amplitude == pytest.approx(0.625)
    tails = [profile.sup_tail(T) for T in (1, 10, 100, 1000)]
    assert all(a > b for a, b in zip(tails, tails[1:]))
    assert tails[-1] < 0.625 / 30


def test_bad_profiles():
    with pytest.raises(ValueError, match="k_infinity must be positive"):
        ArmCoefficientProfile(0.0)
    with pytest.raises(ValueError, match="decay_exponent must be positive"):
        ArmCoefficientProfile(1.0, 0.1, 0.0)
    with pytest.raises(ValueError, match="at least 1"):
        blend(ArmCoefficientProfile(1.0, 0.1), 0.5)
