"""
Slowly stabilizing arm coefficients and their blending with the limit coefficient.

The true coefficient on an arm is k(t)^2 = k_inf^2 + p(t) with a power-law
perturbation p(t) = c (1 + t)^(-delta). The blended coefficient
k_T(t)^2 = k_inf^2 + psi(t - T)^2 p(t) equals the limit one for t < T + 1 and the
true one for t > T + 2, so the perturbation Delta_T = psi_T^2 p can be made as
small as needed by moving T outwards.
"""

import logging
from dataclasses import dataclass

import numpy as np

logger = logging.getLogger(__name__)

# Sampling used for sup-norm estimates of the perturbation
SUP_SAMPLES = 20001
SUP_SPAN = 200.0


def smoothstep_cutoff(x):
    """
    0 for x <= 1, 1 for x >= 2, quintic smoothstep in between (C^2).
    """
    s = np.clip(np.asarray(x, dtype=float) - 1.0, 0.0, 1.0)
    return s * s * s * (10.0 - 15.0 * s + 6.0 * s * s)


@dataclass(frozen=True)
class ArmCoefficientProfile:
    k_infinity: float
    amplitude: float = 0.0
    decay_exponent: float = 1.0

    def __post_init__(self):
        if not self.k_infinity > 0:
            raise ValueError(f"k_infinity must be positive, got {self.k_infinity}")
        if not self.decay_exponent > 0:
            raise ValueError(f"decay_exponent must be positive, got {self.decay_exponent}")

    @classmethod
    def relative(cls, k_infinity, relative_amplitude, decay_exponent=1.0):
        """
        Profile with k(t)^2 = k_inf^2 (1 + r / (1 + t)^delta).
        """
        return cls(k_infinity, k_infinity**2 * relative_amplitude, decay_exponent)

    def perturbation(self, t):
        t = np.maximum(np.asarray(t, dtype=float), 0.0)
        return self.amplitude * (1.0 + t) ** (-self.decay_exponent)

    def coefficient(self, t):
        return self.k_infinity**2 + self.perturbation(t)

    def sup_tail(self, T):
        """
        Sampled sup over t >= T of |p(t)|.
        """
        t = np.linspace(T, T + SUP_SPAN, SUP_SAMPLES)
        return float(np.max(np.abs(self.perturbation(t))))

    @property
    def is_trivial(self):
        return self.amplitude == 0


@dataclass(frozen=True)
class BlendedOperator:
    profile: ArmCoefficientProfile
    T: float
    delta_norm_estimate: float

    @property
    def k_infinity(self):
        return self.profile.k_infinity

    def cutoff(self, t):
        return smoothstep_cutoff(np.asarray(t, dtype=float) - self.T)

    def delta(self, t):
        return self.cutoff(t) ** 2 * self.profile.perturbation(t)

    def coefficient(self, t):
        return self.k_infinity**2 + self.delta(t)

    @property
    def exact_from(self):
        # blended coefficient coincides with the true one beyond this point
        return self.T + 3.0


def blend(profile, T):
    if not T >= 1:
        raise ValueError(f"Blending parameter T must be at least 1, got {T}")
    t = np.linspace(T, T + SUP_SPAN, SUP_SAMPLES)
    estimate = float(np.max(np.abs(smoothstep_cutoff(t - T) ** 2 * profile.perturbation(t))))
    logger.debug(f"Blended profile at T={T}: sup |Delta_T| = {estimate:.4g}")
    return BlendedOperator(profile, float(T), estimate)
