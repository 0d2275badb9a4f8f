"""
Transverse spectra of arm cross-sections, and the points of the operator pencil
obtained by substituting exp(i*lam*t)*phi(y) into the limit Helmholtz operator.

Cross-sections are intervals [0, width] sampled on a cell-centred grid
y_m = (m + 1/2) h, and integrals over the cross-section use the midpoint rule on
that grid. With this choice the sampled cos/sin eigenfunctions are exactly
orthonormal, and they are exact eigenvectors of the 3-point operator with mirror
ghost cells (even for Neumann, odd for Dirichlet).

When a mesh step along the arm is given, the longitudinal wavenumbers are the
discrete ones, cos(lam h) = 1 - h^2 (k^2 - mu) / 2, so that the resulting waves
solve the 5-point scheme exactly.
"""

import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .. import _defaults
from ..errors import ResolutionError, ThresholdCollisionError

logger = logging.getLogger(__name__)


class BoundaryKind(str, Enum):
    DIRICHLET = "dirichlet"
    NEUMANN = "neumann"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        try:
            return cls(str(value).strip().lower())
        except ValueError:
            raise ValueError(f"boundary_kind must be 'dirichlet' or 'neumann', not {value!r}") from None

    @property
    def first_index(self):
        # cos(0) is an admissible Neumann mode, sin(0) is not a Dirichlet one
        return 0 if self is BoundaryKind.NEUMANN else 1


@dataclass(frozen=True, eq=False)
class CrossSectionSpec:
    arm_id: int
    width: float
    boundary_kind: BoundaryKind = BoundaryKind.NEUMANN
    # Real samples on a uniform grid covering [0, width], endpoints included
    transverse_profile: np.ndarray | None = None

    def __post_init__(self):
        if not self.width > 0:
            raise ValueError(f"width must be positive, got {self.width}")
        object.__setattr__(self, "boundary_kind", BoundaryKind.parse(self.boundary_kind))
        if self.transverse_profile is not None:
            profile = np.array(self.transverse_profile, dtype=float)
            if profile.ndim != 1 or profile.size < 2:
                raise ValueError("transverse_profile must be a 1-D array of at least 2 samples over [0, width]")
            profile.setflags(write=False)
            object.__setattr__(self, "transverse_profile", profile)

    def grid_points(self, grid_step):
        """
        Number of cells across the section. The grid step must divide the width.
        """
        if not grid_step > 0:
            raise ValueError(f"grid_step must be positive, got {grid_step}")
        n = int(round(self.width / grid_step))
        if n < 1 or abs(n * grid_step - self.width) > 1e-9 * self.width:
            raise ValueError(f"grid_step {grid_step} does not divide width {self.width}")
        return n

    def grid(self, grid_step):
        n = self.grid_points(grid_step)
        return (np.arange(n) + 0.5) * grid_step

    def profile_at(self, y):
        if self.transverse_profile is None:
            return np.zeros_like(np.asarray(y, dtype=float))
        samples = np.linspace(0.0, self.width, self.transverse_profile.size)
        return np.interp(y, samples, self.transverse_profile)


@dataclass(frozen=True, eq=False)
class CrossSectionSpectrum:
    """
    The first few eigenpairs (mu_n, phi_n) of -d^2/dy^2 - p(y) on one cross-section.
    Rows of `phi` are unit vectors for the midpoint quadrature h * sum(f * g).
    """

    section: CrossSectionSpec
    mu: np.ndarray
    phi: np.ndarray
    grid_step: float
    discrete: bool

    @property
    def y(self):
        return self.section.grid(self.grid_step)

    @property
    def entries(self):
        return list(zip(self.mu, self.phi))

    def __len__(self):
        return len(self.mu)

    def inner(self, f, g):
        return self.grid_step * np.sum(np.asarray(f) * np.conj(g), axis=-1)

    def project(self, values):
        """
        Modal coefficients of transverse samples (last axis is y) on the stored phi_n.
        """
        return self.grid_step * np.tensordot(self.phi, np.asarray(values), axes=([1], [0]))

    def thresholds(self):
        return np.sqrt(self.mu[self.mu >= 0])


def _transverse_matrix_bands(section, grid_step):
    n = section.grid_points(grid_step)
    h2 = grid_step**2
    diag = np.full(n, 2.0 / h2)
    # mirror ghosts: u_-1 = u_0 (Neumann) or -u_0 (Dirichlet)
    edge = 1.0 / h2 if section.boundary_kind is BoundaryKind.NEUMANN else 3.0 / h2
    diag[0] = edge
    diag[-1] = edge if n > 1 else (0.0 if section.boundary_kind is BoundaryKind.NEUMANN else 4.0 / h2)
    diag -= section.profile_at(section.grid(grid_step))
    off = np.full(n - 1, -1.0 / h2)
    return diag, off


def transverse_operator(section, grid_step):
    """
    Dense 3-point matrix of -d^2/dy^2 - p(y) with the section's wall condition.
    """
    diag, off = _transverse_matrix_bands(section, grid_step)
    return np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)


def _canonical_sign(vectors):
    # first clearly nonzero sample positive
    for row in vectors:
        scale = np.max(np.abs(row))
        first = np.flatnonzero(np.abs(row) > 1e-8 * scale)[0]
        if row[first] < 0:
            row *= -1
    return vectors


def transverse_spectrum(section, count, grid_step, discrete=False, check_resolution=True):
    """
    First `count` transverse eigenpairs of the section.

    Without a transverse profile, the closed forms cos(n pi y / w) (Neumann) and
    sin(n pi y / w) (Dirichlet) are sampled; mu is the exact (n pi / w)^2 unless
    `discrete` is set, in which case it is the eigenvalue of the 3-point scheme,
    (4 / h^2) sin^2(n pi h / 2w). With a profile, the 3-point scheme is solved
    as a symmetric tridiagonal eigenproblem.
    """
    if count < 1:
        raise ValueError(f"count must be at least 1, got {count}")
    n_y = section.grid_points(grid_step)
    first = section.boundary_kind.first_index
    highest = first + count - 1
    if count > n_y:
        raise ResolutionError(f"Cannot compute {count} modes on a cross-section of only {n_y} cells")
    if check_resolution and highest > 0:
        per_oscillation = 2 * n_y / highest
        if per_oscillation < _defaults.POINTS_PER_OSCILLATION:
            raise ResolutionError(
                f"Grid too coarse: mode {highest} of arm {section.arm_id} has {per_oscillation:.1f} points "
                f"per oscillation (need {_defaults.POINTS_PER_OSCILLATION}); reduce grid_step below "
                f"{2 * section.width / (_defaults.POINTS_PER_OSCILLATION * highest):.4g}"
            )

    y = section.grid(grid_step)
    w = section.width
    if section.transverse_profile is None:
        n = np.arange(first, first + count)
        if section.boundary_kind is BoundaryKind.NEUMANN:
            vectors = np.cos(np.outer(n, y) * np.pi / w)
        else:
            vectors = np.sin(np.outer(n, y) * np.pi / w)
        if discrete:
            mu = (4 / grid_step**2) * np.sin(n * np.pi * grid_step / (2 * w)) ** 2
        else:
            mu = (n * np.pi / w) ** 2
        vectors /= np.sqrt(grid_step * np.sum(vectors**2, axis=1))[:, None]
        is_discrete = discrete
    else:
        diag, off = _transverse_matrix_bands(section, grid_step)
        mu, columns = eigh_tridiagonal(diag, off, select="i", select_range=(0, count - 1))
        vectors = _canonical_sign(columns.T / np.sqrt(grid_step))
        is_discrete = True
    mu = np.asarray(mu, dtype=float)
    vectors = np.ascontiguousarray(vectors)
    mu.setflags(write=False)
    vectors.setflags(write=False)
    logger.debug(f"Arm {section.arm_id}: transverse mu = {np.array2string(mu, precision=6)}")
    return CrossSectionSpectrum(section, mu, vectors, grid_step, is_discrete)


def longitudinal_wavenumber(mu, k, mesh_step=None):
    """
    Root lam of the dispersion relation with Re lam >= 0 and Im lam >= 0.
    With a mesh step, the 3-point relation cos(lam h) = 1 - h^2 (k^2 - mu) / 2 is used.
    """
    d = k * k - mu
    if mesh_step is None:
        return complex(np.sqrt(d)) if d >= 0 else 1j * np.sqrt(-d)
    c = 1 - mesh_step**2 * d / 2
    if c < -1:
        raise ResolutionError(f"Mesh step {mesh_step} cannot resolve k = {k} against mu = {mu}")
    if c <= 1:
        return complex(np.arccos(c) / mesh_step)
    return 1j * np.arccosh(c) / mesh_step


@dataclass(frozen=True, eq=False)
class PencilPoint:
    lam: complex
    multiplicity: int
    chain_length: int
    transverse_index: int
    mu: float
    phi: np.ndarray = field(repr=False)
    arm_id: int = 0
    grid_step: float = 1.0
    mesh_step: float | None = None

    @property
    def rate(self):
        return self.lam.imag

    @property
    def is_threshold(self):
        return self.chain_length == 2

    @property
    def is_propagating(self):
        return self.lam.imag == 0 and self.lam.real != 0


@dataclass(frozen=True, eq=False)
class PencilSpectrum:
    k: float
    beta: float
    points: tuple
    threshold_flags: tuple
    threshold_tol: float
    spectrum: CrossSectionSpectrum
    mesh_step: float | None = None

    def strip(self, rate):
        """
        Points with |Im lam| < rate.
        """
        return [p for p in self.points if abs(p.lam.imag) < rate]

    def algebraic_multiplicity(self, rate=None):
        points = self.points if rate is None else self.strip(rate)
        return sum(p.multiplicity * p.chain_length for p in points)

    def mode_count(self, rate=None):
        return self.algebraic_multiplicity(rate) // 2

    @property
    def real_points(self):
        return [p for p in self.points if p.lam.imag == 0]

    @property
    def has_threshold(self):
        return any(self.threshold_flags)


def pencil_spectrum(spectrum, k, beta, threshold_tol=None, mesh_step=None):
    """
    All pencil points with |Im lam| <= beta from lam^2 = k^2 - mu_n.
    Points come out ordered by transverse index, +lam before -lam.
    """
    if not k > 0:
        raise ValueError(f"k must be positive, got {k}")
    if not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if threshold_tol is None:
        threshold_tol = _defaults.THRESHOLD_TOL_FACTOR * k * k

    section = spectrum.section
    common = dict(arm_id=section.arm_id, grid_step=spectrum.grid_step, mesh_step=mesh_step)
    points = []
    flags = []
    last_inside = False
    for n, (mu, phi) in enumerate(spectrum.entries):
        flag = abs(k * k - mu) < threshold_tol
        flags.append(flag)
        if flag:
            points.append(PencilPoint(0j, 1, 2, n, mu, phi, **common))
            last_inside = True
            continue
        lam = longitudinal_wavenumber(mu, k, mesh_step)
        if lam.imag == 0:
            points.append(PencilPoint(lam, 1, 1, n, mu, phi, **common))
            points.append(PencilPoint(-lam, 1, 1, n, mu, phi, **common))
            last_inside = True
            continue
        kappa = lam.imag
        if abs(kappa - beta) < threshold_tol:
            raise ThresholdCollisionError(
                f"Rate line beta={beta} passes through the pencil point {kappa:.12g}i (mu={mu:.12g})", mu=mu
            )
        last_inside = kappa < beta
        if last_inside:
            points.append(PencilPoint(1j * kappa, 1, 1, n, mu, phi, **common))
            points.append(PencilPoint(-1j * kappa, 1, 1, n, mu, phi, **common))
    if last_inside and len(spectrum) < spectrum.section.grid_points(spectrum.grid_step):
        raise ResolutionError(
            f"All {len(spectrum)} computed modes of arm {section.arm_id} fall inside the strip |Im lam| <= {beta}; "
            "increase the mode count"
        )
    if any(flags):
        logger.info(f"Arm {section.arm_id}: k={k} is on a threshold, using a Jordan chain of length 2")
    return PencilSpectrum(k, beta, tuple(points), tuple(flags), threshold_tol, spectrum, mesh_step)


def arm_thresholds(section, count, grid_step=None, discrete=False):
    """
    Threshold wavenumbers sqrt(mu_n) for the first `count` modes of a section.
    """
    grid_step = grid_step or section.width / _defaults.DIVISIONS
    spectrum = transverse_spectrum(section, count, grid_step, discrete=discrete, check_resolution=False)
    return spectrum.thresholds()
