"""
Trapped-mode detection from the augmented scattering matrix.

A decaying solution of the homogeneous problem shows up as an eigenvalue 1 of the
evanescent block S22 of the augmented matrix. The sweep looks for dips of
min |eig(S22) - 1| over a k grid, refines each dip, and checks it against an
independent oracle: below the lowest threshold a direct eigensolve of the
truncated domain closed by exact decaying ratios, above it the smallest singular
value of the classical system.
"""

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.optimize import minimize_scalar
from scipy.sparse.linalg import eigsh

from .. import _defaults
from ..errors import ResonanceError, ThresholdCollisionError
from ..junction.closure import smallest_evanescent_rate
from ..junction.mesh import DIRICHLET_WALL, TRUNCATION, build_mesh
from ..junction.solver import _cell_coefficient, assemble, decaying_kernel_search, reassemble
from ..modes.cross_section import arm_thresholds, longitudinal_wavenumber, transverse_spectrum
from .matrices import augmented_S, classical_S, classical_T, transform_scattering_matrix

logger = logging.getLogger(__name__)

# Starting points per segment for the independent oracle search
ORACLE_STARTS = 4


@dataclass(frozen=True, eq=False)
class ScanPoint:
    k: float
    unitarity_defect: float = np.nan
    eigenvalues: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=complex), repr=False)
    distance: float = np.inf
    energy_defect: float = np.nan
    M: int = 0
    M_prime: int = 0
    flags: tuple = ()


@dataclass(frozen=True)
class Bracket:
    k_low: float
    k_high: float
    k: float
    distance: float
    oracle_k: float | None = None

    @property
    def confirmed(self):
        return self.oracle_k is not None


@dataclass(frozen=True, eq=False)
class SweepReport:
    k: np.ndarray = field(repr=False)
    points: tuple = field(repr=False)
    brackets: tuple
    oracle_modes: tuple
    split_plan: tuple
    step: float
    consistent: bool


@dataclass(frozen=True, eq=False)
class KernelCountReport:
    k: float
    M: int
    strip_multiplicity: int
    eigen_count: int
    oracle_count: int
    eigenvalues: np.ndarray = field(repr=False)
    singular_values: np.ndarray = field(repr=False)

    @property
    def consistent(self):
        return self.eigen_count == self.oracle_count


def thresholds(geometry, h, k_max):
    """
    Continuous and discrete thresholds of every arm up to k_max, sorted.
    """
    found = set()
    for arm in geometry.arms:
        n_y = arm.section.grid_points(h)
        for discrete in (False, True):
            found.update(float(k) for k in arm_thresholds(arm.section, n_y, h, discrete) if 0 < k <= 1.01 * k_max)
    return sorted(found)


def split_plan(geometry, k_values, h):
    """
    Segments of the k grid separated by thresholds, each point kept at least
    THRESHOLD_GUARD * k away from every threshold.
    """
    k_values = np.asarray(k_values, dtype=float)
    thr = np.array(thresholds(geometry, h, float(k_values.max())))
    segments = []
    current = []
    for k in k_values:
        if thr.size and np.min(np.abs(thr - k)) < _defaults.THRESHOLD_GUARD * k:
            continue
        side = int(np.searchsorted(thr, k)) if thr.size else 0
        if current and current[-1][1] != side:
            segments.append(tuple(x for x, _ in current))
            current = []
        current.append((k, side))
    if current:
        segments.append(tuple(x for x, _ in current))
    if len(segments) > 1:
        logger.info(f"k range split into {len(segments)} segments at thresholds {np.round(thr, 6).tolist()}")
    return tuple(segments)


def _scan_point(geometry, k, beta, h, propagating_transform):
    try:
        problem = assemble(geometry, k, beta=beta or None, h=h)
        S = augmented_S(problem, beta) if beta else classical_S(classical_T(problem), problem)
    except (ThresholdCollisionError, ResonanceError) as e:
        logger.warning(f"Skipping k={k}: {e}")
        return ScanPoint(k, flags=(type(e).__name__,))
    if propagating_transform is not None and S.M:
        S = transform_scattering_matrix(S, propagating_transform)
    eig = S.eigenvalues_22()
    propagating = S.entries[:, : S.M]
    energy = float(np.linalg.norm(propagating.conj().T @ propagating - np.eye(S.M))) if S.M else 0.0
    flags = ()
    if S.unitarity_defect > _defaults.UNITARITY_TOL:
        flags += ("unitarity",)
    logger.info(
        f"k={k:.8f}: M={S.M}, M'={S.M_prime}, min|eig-1|={S.distance_to_one():.3e}, defect={S.unitarity_defect:.2e}"
    )
    return ScanPoint(k, S.unitarity_defect, eig, S.distance_to_one(), energy, S.M, S.M_prime, flags)


def _distance(geometry, k, beta, h, propagating_transform):
    return _scan_point(geometry, k, beta, h, propagating_transform).distance


def _oracle_matrix(mesh, spectra, k):
    """
    Truncated-domain operator (h^2-scaled, without -h^2 k^2) closed by the exact
    decaying ratios of every transverse mode, or None if some mode propagates.
    """
    n = mesh.n_cells
    cells = np.arange(n)
    rows, cols, vals = [], [], []
    h = mesh.h
    diag = -h * h * _cell_coefficient(mesh, 0.0)
    for link in mesh.links:
        coupled = link >= 0
        rows.append(cells[coupled])
        cols.append(link[coupled])
        vals.append(-np.ones(int(coupled.sum())))
        diag += coupled + 2.0 * (link == DIRICHLET_WALL) + (link == TRUNCATION)
    rows.append(cells)
    cols.append(cells)
    vals.append(diag)
    for ids, spectrum in zip(mesh.arm_cells, spectra):
        lam = np.array([longitudinal_wavenumber(mu, k, h) for mu in spectrum.mu])
        if np.any(lam.imag <= 0):
            return None
        ratios = np.exp(-lam.imag * h)
        block = -h * (spectrum.phi.T * ratios) @ spectrum.phi
        last = ids[:, -1]
        n_y = len(last)
        rows.append(np.repeat(last, n_y))
        cols.append(np.tile(last, n_y))
        vals.append(block.ravel())
    return sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    ).tocsc()


def _oracle_spectra(geometry, h):
    return [
        transverse_spectrum(arm.section, arm.section.grid_points(h), h, discrete=True, check_resolution=False)
        for arm in geometry.arms
    ]


def oracle_eigensolve(geometry, k_start, h, k_window=None):
    """
    Fixed-point iteration k <- sqrt(E(k)) on the eigenvalue E(k) of the decaying
    closure operator nearest k^2. Returns the converged k or None when the iteration
    leaves the window below the lowest threshold.
    """
    mesh = build_mesh(geometry, h)
    spectra = _oracle_spectra(geometry, h)
    low, high = k_window if k_window is not None else (0.0, np.inf)
    n = mesh.n_cells
    v0 = np.ones(n) / np.sqrt(n)
    k = float(k_start)
    for iteration in range(_defaults.ORACLE_MAX_ITERATIONS):
        K = _oracle_matrix(mesh, spectra, k)
        if K is None:
            return None
        count = min(_defaults.ORACLE_EIGENVALUES, n - 2)
        vals = eigsh(K, k=count, sigma=(h * k) ** 2, which="LM", v0=v0, return_eigenvectors=False)
        nearest = float(vals[np.argmin(np.abs(vals - (h * k) ** 2))])
        if nearest <= 0:
            return None
        k_next = np.sqrt(nearest) / h
        logger.debug(f"Oracle iteration {iteration}: k={k:.12f} -> {k_next:.12f}")
        if not low <= k_next <= high:
            return None
        if abs(k_next - k) < _defaults.ORACLE_KTOL:
            return float(k_next)
        k = k_next
    logger.warning(f"Trapped-mode oracle did not converge from k={k_start}")
    return None


def _kernel_oracle(geometry, k_low, k_high, h):
    """
    Minimum over [k_low, k_high] of the relative smallest singular value of the classical system.
    """
    def sigma(k):
        try:
            return float(decaying_kernel_search(assemble(geometry, k, h=h), count=1).relative[0])
        except ThresholdCollisionError:
            return np.inf

    result = minimize_scalar(sigma, bounds=(k_low, k_high), method="bounded", options={"xatol": _defaults.REFINE_XATOL})
    return float(result.x), float(result.fun)


def _direct_oracle_applies(geometry, k, h):
    if any(arm.profile is not None for arm in geometry.arms):
        return False
    thr = thresholds(geometry, h, k)
    return not thr or k < min(thr)


def _confirm(geometry, bracket_k, low, high, h, step):
    if _direct_oracle_applies(geometry, high, h):
        k_star = oracle_eigensolve(geometry, bracket_k, h, (low - step, high + step))
        if k_star is not None and abs(k_star - bracket_k) <= step:
            return k_star
        return None
    k_star, sigma = _kernel_oracle(geometry, low, high, h)
    return k_star if sigma < _defaults.KERNEL_TOL * 1e3 else None


def _independent_oracle(geometry, segment, h, step):
    """
    Trapped modes found by the direct eigensolve from a few starting points of a
    segment lying below the lowest threshold.
    """
    if not _direct_oracle_applies(geometry, segment[-1], h):
        return []
    starts = np.linspace(segment[0], segment[-1], ORACLE_STARTS)
    found = []
    for start in starts:
        k_star = oracle_eigensolve(geometry, start, h, (segment[0] - step, segment[-1] + step))
        if k_star is not None and not any(abs(k_star - f) < 1e-8 for f in found):
            found.append(k_star)
    return sorted(found)


def scattering_sweep(geometry, k_values, beta=None, divisions=None, h=None, threads=1, propagating_transform=None):
    """
    S at every k of the grid away from thresholds, classical when beta is not given.
    Points are computed concurrently and returned in k order with the split plan.
    """
    k_values = np.sort(np.asarray(k_values, dtype=float))
    h = h or geometry.default_step(divisions)
    plan = split_plan(geometry, k_values, h)
    kept = [k for segment in plan for k in segment]
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        points = list(pool.map(lambda k: _scan_point(geometry, k, beta, h, propagating_transform), kept))
    return plan, tuple(points)


def trapped_mode_scan(
    geometry, k_values, beta, divisions=None, h=None, threads=1, propagating_transform=None, eigen_tol=None
):
    """
    Sweep min |eig(S22) - 1| over k_values, bracket and refine its dips, and
    cross-validate every bracket with an oracle.
    """
    k_values = np.sort(np.asarray(k_values, dtype=float))
    if k_values.size < 3:
        raise ValueError("A trapped-mode scan needs at least 3 wavenumbers")
    if not beta or not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    eigen_tol = eigen_tol or _defaults.EIGEN_TOL
    h = h or geometry.default_step(divisions)
    step = float(np.max(np.diff(k_values)))
    plan, points = scattering_sweep(
        geometry, k_values, beta, h=h, threads=threads, propagating_transform=propagating_transform
    )
    kept = [p.k for p in points]
    by_k = {p.k: p for p in points}

    brackets, oracle_modes = [], []
    for segment in plan:
        d = np.array([by_k[k].distance for k in segment])
        for i in range(len(segment)):
            left = d[i - 1] if i > 0 else np.inf
            right = d[i + 1] if i + 1 < len(segment) else np.inf
            if not (d[i] < _defaults.COARSE_GATE and d[i] <= left and d[i] <= right):
                continue
            low, high = segment[max(i - 1, 0)], segment[min(i + 1, len(segment) - 1)]
            result = minimize_scalar(
                lambda k: _distance(geometry, k, beta, h, propagating_transform),
                bounds=(low, high),
                method="bounded",
                options={"xatol": _defaults.REFINE_XATOL},
            )
            if result.fun > eigen_tol:
                logger.debug(f"Dip near k={segment[i]} only reaches {result.fun:.3e}")
                continue
            oracle_k = _confirm(geometry, float(result.x), low, high, h, step)
            if oracle_k is None:
                logger.warning(f"Trapped-mode candidate k={result.x:.8f} is not confirmed by the oracle")
            brackets.append(Bracket(float(low), float(high), float(result.x), float(result.fun), oracle_k))
        oracle_modes += _independent_oracle(geometry, segment, h, step)

    matched = all(any(abs(b.k - m) <= step for b in brackets) for m in oracle_modes)
    consistent = matched and all(b.confirmed for b in brackets)
    logger.info(
        f"Trapped-mode scan of {geometry.name}: {len(brackets)} bracket(s), oracle modes {oracle_modes}, "
        f"consistent={consistent}"
    )
    return SweepReport(
        np.array(kept), tuple(points), tuple(brackets), tuple(oracle_modes), plan, step, consistent
    )


def kernel_count_report(geometry, k, gamma=None, beta=None, divisions=None, h=None, eigen_tol=None, count=3):
    """
    Both sides of the trapped-mode criterion at one k: the number of eigenvalues of
    S22 within eigen_tol of 1, and the number of decaying kernel elements of the
    classical system.
    """
    eigen_tol = eigen_tol or _defaults.EIGEN_TOL
    h = h or geometry.default_step(divisions)
    if beta is None:
        beta = 2 * smallest_evanescent_rate(geometry.arms, k, h)
    problem = assemble(geometry, k, gamma=gamma, beta=beta, h=h)
    S = augmented_S(problem, beta)
    eig = S.eigenvalues_22()
    eigen_count = int(np.sum(np.abs(eig - 1) < eigen_tol))
    multiplicity = sum(c.pencil.algebraic_multiplicity(problem.gamma) for c in problem.closures)
    kernel = decaying_kernel_search(reassemble(problem, beta=None), count=count)
    oracle_count = int(np.sum(kernel.relative < _defaults.KERNEL_TOL))
    logger.info(
        f"Kernel count at k={k}: M={problem.M}, dim ker(S22 - I)={eigen_count}, decaying kernel={oracle_count}"
    )
    return KernelCountReport(k, problem.M, multiplicity, eigen_count, oracle_count, eig, kernel.singular_values)
