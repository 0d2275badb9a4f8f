"""
Exact modal closure of a truncated arm.

Beyond its last column J an arm is a uniform (or, for profile arms, slowly
stabilizing) duct, so the discrete field there is a sum over transverse modes of
solutions of a 3-point recurrence. Captured modes carry one prescribed and one
unknown amplitude; every other mode must decay, which fixes its ghost value from
its column-J value through a single ratio. The ghost column J + 1 is therefore an
exact linear function of the column-J values and the captured amplitudes.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from .. import _defaults
from ..errors import ResolutionError, ResonanceError, ThresholdCollisionError
from ..model_problem.blending import blend
from ..model_problem.neumann_series import chain_rate, neumann_series_wave
from ..modes.cross_section import longitudinal_wavenumber, pencil_spectrum, transverse_spectrum
from ..modes.wave_basis import augmented_pairs, flux_dual_pair, make_wave, normalize_basis, waves_in_strip

logger = logging.getLogger(__name__)

# Extra columns used to start the backward recurrence of a profile arm
MILLER_DECAYS = 40.0


@dataclass(frozen=True, eq=False)
class CapturedMode:
    index: int
    phi: np.ndarray = field(repr=False)
    incoming: object = field(repr=False)
    outgoing: object = field(repr=False)
    # longitudinal coefficients at (t_J, t_J+1)
    inner: np.ndarray = field(repr=False)
    outer: np.ndarray = field(repr=False)
    augmented: bool = False

    @property
    def scale(self):
        return float(max(abs(self.outer[0]), abs(self.outer[1])))

    @property
    def incoming_scale(self):
        return float(max(abs(self.inner[0]), abs(self.inner[1])))


@dataclass(frozen=True, eq=False)
class DecayingMode:
    index: int
    phi: np.ndarray = field(repr=False)
    ratio: complex
    kappa: float


@dataclass(frozen=True, eq=False)
class ArmClosure:
    arm: object
    arm_index: int
    h: float
    n_y: int
    n_t: int
    spectrum: object
    pencil: object
    captured: tuple
    decaying: tuple
    tail_phi: np.ndarray = field(repr=False)
    tail_ratios: np.ndarray = field(repr=False)
    tail_attenuation: float = 0.0

    @property
    def arm_id(self):
        return self.arm.arm_id

    @property
    def t_last(self):
        return (self.n_t - 0.5) * self.h

    @property
    def t_ghost(self):
        return (self.n_t + 0.5) * self.h

    @property
    def classical(self):
        return tuple(c for c in self.captured if not c.augmented)

    @property
    def augmented(self):
        return tuple(c for c in self.captured if c.augmented)

    @property
    def explicit_count(self):
        return len(self.captured) + len(self.decaying)

    def tail_block(self):
        """
        Ghost contribution of the tail modes, h^2-scaled rows: -h Phi^T diag(r) Phi.
        """
        if not len(self.tail_ratios):
            return np.zeros((self.n_y, self.n_y))
        return -self.h * (self.tail_phi.T * self.tail_ratios) @ self.tail_phi


def _limit_ratio(a):
    # decaying root of rho^2 - a rho + 1 = 0, a > 2
    return (a - np.sqrt(a * a - 4.0)) / 2


def _profile_ratio(arm, k, mu, h, n_t, kappa):
    """
    c(J+1)/c(J) of the decaying solution of the true recurrence, by backward recurrence.
    """
    extra = int(np.ceil(MILLER_DECAYS / max(kappa * h, 1e-3)))
    extra = min(extra, 200000)
    j = np.arange(n_t, n_t + extra)
    t = (j + 0.5) * h
    a = 2.0 - h * h * (k * k + arm.profile.perturbation(t) - mu)
    r = _limit_ratio(a[-1])
    for aj in a[::-1]:
        r = 1.0 / (aj - r)
    return r


def _captured_values(wave, phi, t_pair):
    return np.asarray(wave.longitudinal(t_pair, phi), dtype=complex)


def _series_wave(blended, wave, rate, h, t_ghost):
    z = neumann_series_wave(blended, wave, rate, mesh_step=h, t0=h / 2)
    if z.support()[1] < t_ghost + h / 2:
        z = neumann_series_wave(blended, wave, rate, L=t_ghost + 2 * h, mesh_step=h, t0=h / 2)
    return z


def build_closure(arm, arm_index, k, h, gamma, beta=None, mode_cutoff=None, threshold_mode=False, threshold_tol=None):
    """
    Closure data of one arm at wavenumber k. Modes with |Im lam| < gamma are
    captured classically; with beta, evanescent modes with gamma <= kappa < beta are
    captured as augmented incoming/outgoing pairs.
    """
    section = arm.section
    n_y = section.grid_points(h)
    n_t = int(round(arm.truncation / h))
    if n_t < 4:
        raise ResolutionError(f"Arm {arm.arm_id} needs at least 4 columns, got {n_t}")
    threshold_tol = threshold_tol if threshold_tol is not None else _defaults.THRESHOLD_TOL_FACTOR * k * k
    spectrum = transverse_spectrum(section, n_y, h, discrete=True, check_resolution=False)
    cut = max(gamma, beta or 0.0)
    pencil = pencil_spectrum(spectrum, k, cut, threshold_tol, mesh_step=h)
    if pencil.has_threshold and not threshold_mode:
        n = pencil.threshold_flags.index(True)
        raise ThresholdCollisionError(
            f"k={k} sits on the discrete threshold of mode {n} of arm {arm.arm_id}", mu=float(spectrum.mu[n])
        )
    for p in pencil.points:
        if p.lam.imag > 0 and abs(p.lam.imag - gamma) < threshold_tol:
            raise ThresholdCollisionError(f"Rate gamma={gamma} passes through {p.lam.imag:.12g}i", mu=p.mu)

    t_last, t_ghost = (n_t - 0.5) * h, (n_t + 0.5) * h
    t_pair = np.array([t_last, t_ghost])
    blended = None
    if arm.profile is not None:
        blended = blend(replace(arm.profile, k_infinity=k), arm.blending_T)

    captured = []
    strip = waves_in_strip(pencil, gamma)
    if strip:
        basis = normalize_basis(strip, mesh_step=h)
        for inc, out in zip(basis.incoming, basis.outgoing):
            if blended is not None:
                inc = _series_wave(blended, inc, -gamma, h, t_ghost)
                out = _series_wave(blended, out, -gamma, h, t_ghost)
            phi = spectrum.phi[inc.transverse_index]
            captured.append(
                CapturedMode(
                    inc.transverse_index, phi, inc, out, _captured_values(inc, phi, t_pair),
                    _captured_values(out, phi, t_pair),
                )
            )
    if beta:
        for p in pencil.points:
            kappa = p.lam.imag
            if not (kappa > 0 and gamma <= kappa < beta):
                continue
            minus = next(q for q in pencil.points if q.transverse_index == p.transverse_index and q.lam.imag < 0)
            d, g = flux_dual_pair(make_wave(p), make_wave(minus), mesh_step=h)
            if blended is not None:
                d = _series_wave(blended, d, chain_rate(p, pencil), h, t_ghost)
                g = _series_wave(blended, g, chain_rate(minus, pencil), h, t_ghost)
                R = t_last - h
            else:
                R = None
            inc, out = augmented_pairs(d, g, R=R, mesh_step=h)
            phi = p.phi
            captured.append(
                CapturedMode(
                    p.transverse_index, phi, inc, out, _captured_values(inc, phi, t_pair),
                    _captured_values(out, phi, t_pair), augmented=True,
                )
            )

    propagating = {p.transverse_index for p in pencil.points if p.lam.imag == 0}
    explicit = mode_cutoff if mode_cutoff is not None else len(captured) + _defaults.EXTRA_DECAYING_MODES
    if explicit < len(propagating):
        raise ValueError(
            f"mode_cutoff {explicit} on arm {arm.arm_id} is below the {len(propagating)} propagating modes"
        )
    explicit = max(explicit, len(captured))
    taken = {c.index for c in captured}
    highest = max(taken, default=-1) + section.boundary_kind.first_index
    if highest > 0 and 2 * n_y / highest < _defaults.POINTS_PER_OSCILLATION:
        raise ResolutionError(
            f"Grid too coarse for captured mode {highest} of arm {arm.arm_id}: "
            f"{2 * n_y / highest:.1f} points per oscillation"
        )

    decaying, tail_phi, tail_ratios, tail_kappa = [], [], [], []
    for n, (mu, phi) in enumerate(spectrum.entries):
        if n in taken:
            continue
        lam = longitudinal_wavenumber(mu, k, h)
        if lam.imag <= 0:
            raise ThresholdCollisionError(f"Mode {n} of arm {arm.arm_id} is not evanescent at k={k}", mu=mu)
        kappa = lam.imag
        if blended is not None:
            ratio = _profile_ratio(arm, k, mu, h, n_t, kappa)
        else:
            ratio = np.exp(-kappa * h)
        if len(taken) + len(decaying) < explicit:
            decaying.append(DecayingMode(n, phi, complex(ratio), kappa))
        else:
            tail_phi.append(phi)
            tail_ratios.append(float(np.real(ratio)))
            tail_kappa.append(kappa)
    tail_attenuation = float(np.exp(-min(tail_kappa) * arm.truncation)) if tail_kappa else 0.0

    for c in captured:
        size = max(c.scale, c.incoming_scale)
        if not np.isfinite(size) or size > _defaults.GROWTH_LIMIT:
            raise ResonanceError(
                f"Captured mode {c.index} of arm {arm.arm_id} grows to {size:.3g} at the truncation; "
                "use a smaller truncation length R_a or a smaller beta"
            )
    logger.debug(
        f"Arm {arm.arm_id}: {len(captured)} captured, {len(decaying)} decaying, {len(tail_ratios)} tail modes, "
        f"tail attenuation {tail_attenuation:.2e}"
    )
    return ArmClosure(
        arm=arm,
        arm_index=arm_index,
        h=h,
        n_y=n_y,
        n_t=n_t,
        spectrum=spectrum,
        pencil=pencil,
        captured=tuple(captured),
        decaying=tuple(decaying),
        tail_phi=np.array(tail_phi).reshape(len(tail_phi), n_y),
        tail_ratios=np.array(tail_ratios),
        tail_attenuation=tail_attenuation,
    )


def smallest_evanescent_rate(arms, k, h):
    """
    Smallest discrete decay rate over all arms, the automatic strip half-width being half of it.
    """
    rates = []
    for arm in arms:
        n_y = arm.section.grid_points(h)
        spectrum = transverse_spectrum(arm.section, n_y, h, discrete=True, check_resolution=False)
        for mu in spectrum.mu:
            lam = longitudinal_wavenumber(mu, k, h)
            if lam.imag > 0:
                rates.append(lam.imag)
    return min(rates) if rates else 1.0
