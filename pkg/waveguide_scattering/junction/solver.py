"""
Assembly and solution of the truncated junction problem.

Rows are the 5-point Helmholtz scheme multiplied by h^2, one per owned cell,
followed by one matching row per explicit arm mode

    h * sum_m phi_n(m) u(m, J) - x_n * w_n(J) / s_n = p_n(J) * a_n

where w_n is the unknown (normally outgoing) function of the mode, p_n the
prescribed one and s_n a column scale. The ghost column of every arm is expressed
through the same amplitudes plus a dense block for the tail modes.
"""

import logging
from dataclasses import dataclass, field, replace
from functools import cached_property

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import LinearOperator, eigsh, splu
from scipy.sparse.linalg import norm as sparse_norm

from .. import _defaults
from ..errors import ResonanceError, SolvabilityError, ThresholdCollisionError
from ..modes.cross_section import arm_thresholds
from ..modes.wave_basis import Direction, GridField, flux_pairing, pairing_matrix
from .closure import DecayingMode, build_closure, smallest_evanescent_rate
from .mesh import DIRICHLET_WALL, NEUMANN_WALL, TRUNCATION, build_mesh

logger = logging.getLogger(__name__)

# Arm columns next to the truncation that volume data must stay clear of
LEAKAGE_COLUMNS = 3


@dataclass(frozen=True, eq=False)
class GlobalWaveBasis:
    """
    All captured waves of a junction: classical ones arm by arm, then augmented ones.
    """

    incoming: tuple
    outgoing: tuple
    slots: tuple
    M: int
    positions: dict = field(default_factory=dict)

    @property
    def M_prime(self):
        return len(self.incoming)

    @property
    def waves(self):
        return self.incoming + self.outgoing

    @property
    def labels(self):
        return [getattr(w, "label", "") for w in self.incoming]

    def pairing_matrix(self):
        waves = self.waves
        out = np.zeros((len(waves), len(waves)), dtype=complex)
        for arm_id, R in self.positions.items():
            idx = [i for i, w in enumerate(waves) if w.arm_id == arm_id]
            sub = [waves[i] for i in idx]
            out[np.ix_(idx, idx)] = pairing_matrix(sub, sub, R)
        return out

    def canonical_deviation(self):
        n = self.M_prime
        if not n:
            return 0.0
        expected = np.diag([-1j] * n + [1j] * n)
        return float(np.max(np.abs(self.pairing_matrix() - expected)))


@dataclass(frozen=True, eq=False)
class AmplitudeVector:
    incoming: np.ndarray
    outgoing: np.ndarray
    decaying: dict = field(default_factory=dict)
    remainder_decay_norm: float = 0.0
    tail_attenuation: float = 0.0
    residual: float = 0.0


@dataclass(frozen=True, eq=False)
class JunctionField:
    mesh: object
    values: np.ndarray = field(repr=False)
    k: float = 0.0

    def grid(self):
        out = np.full(self.mesh.shape, np.nan, dtype=complex)
        out[self.mesh.cells[:, 0], self.mesh.cells[:, 1]] = self.values
        return out

    def arm_field(self, arm_index):
        ids = self.mesh.arm_cells[arm_index]
        h = self.mesh.h
        arm = self.mesh.geometry.arms[arm_index]
        return GridField(arm.arm_id, h / 2, h, self.values[ids], h, h)

    def arm_fields(self):
        return {arm.arm_id: self.arm_field(a) for a, arm in enumerate(self.mesh.geometry.arms)}


@dataclass(frozen=True)
class KernelSearch:
    singular_values: np.ndarray
    relative: np.ndarray
    vectors: np.ndarray
    scale: float


@dataclass(frozen=True, eq=False)
class RadiationSolution:
    field: JunctionField
    b_flux: np.ndarray
    b_volume: np.ndarray
    agreement: float
    leakage: float


def _explicit_modes(closure):
    return list(closure.captured) + list(closure.decaying)


def _unknown_function(mode, prescribe):
    """
    ((w(J), w(J+1)), scale) of the function multiplying the unknown amplitude.
    """
    if isinstance(mode, DecayingMode):
        return (1.0, mode.ratio), 1.0
    if prescribe is Direction.INCOMING:
        return tuple(mode.outer), mode.scale
    return tuple(mode.inner), mode.incoming_scale


def _prescribed_function(mode, prescribe):
    return mode.inner if prescribe is Direction.INCOMING else mode.outer


def _cell_coefficient(mesh, k):
    coefficient = np.full(mesh.n_cells, k * k)
    for ids, arm in zip(mesh.arm_cells, mesh.geometry.arms):
        n_y, n_t = ids.shape
        h = mesh.h
        s = (np.arange(n_y) + 0.5) * h
        t = (np.arange(n_t) + 0.5) * h
        extra = arm.section.profile_at(s)[:, None] * np.ones((1, n_t))
        if arm.profile is not None:
            extra = extra + arm.profile.perturbation(t)[None, :]
        coefficient[ids] += extra
    return coefficient


def _offsets(mesh, closures):
    counts = [c.explicit_count for c in closures]
    return mesh.n_cells + np.concatenate([[0], np.cumsum(counts)[:-1]]).astype(int), mesh.n_cells + sum(counts)


def _assemble_matrix(mesh, closures, coefficient, prescribe):
    h = mesh.h
    n = mesh.n_cells
    offsets, size = _offsets(mesh, closures)
    rows, cols, vals = [], [], []

    def add(r, c, v):
        r, c, v = np.broadcast_arrays(np.atleast_1d(r), np.atleast_1d(c), np.atleast_1d(v))
        rows.append(r.ravel())
        cols.append(c.ravel())
        vals.append(v.ravel().astype(complex))

    cells = np.arange(n)
    diag = -h * h * coefficient.astype(complex)
    for link in mesh.links:
        coupled = link >= 0
        add(cells[coupled], link[coupled], -1.0)
        diag += coupled + 2.0 * (link == DIRICHLET_WALL) + (link == TRUNCATION)
    add(cells, cells, diag)

    for closure, offset in zip(closures, offsets):
        last = mesh.arm_cells[closure.arm_index][:, -1]
        n_y = closure.n_y
        add(np.repeat(last, n_y), np.tile(last, n_y), closure.tail_block().ravel())
        for i, mode in enumerate(_explicit_modes(closure)):
            col = offset + i
            (w_last, w_ghost), scale = _unknown_function(mode, prescribe)
            add(last, col, -mode.phi * w_ghost / scale)
            add(col, last, h * mode.phi)
            add(col, col, -w_last / scale)
    matrix = sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(size, size)
    ).tocsc()
    return matrix


def _global_basis(closures):
    slots = []
    for augmented in (False, True):
        for ci, closure in enumerate(closures):
            for li, mode in enumerate(closure.captured):
                if mode.augmented == augmented:
                    slots.append((ci, li))
    incoming = tuple(closures[ci].captured[li].incoming for ci, li in slots)
    outgoing = tuple(closures[ci].captured[li].outgoing for ci, li in slots)
    M = sum(1 for ci, li in slots if not closures[ci].captured[li].augmented)
    positions = {c.arm_id: c.t_last - c.h for c in closures}
    return GlobalWaveBasis(incoming, outgoing, tuple(slots), M, positions)


@dataclass(frozen=True, eq=False)
class DiscreteProblem:
    geometry: object
    k: float
    h: float
    gamma: float
    beta: float | None
    mesh: object
    closures: tuple
    coefficient: np.ndarray = field(repr=False)
    basis: GlobalWaveBasis = field(repr=False)
    matrix: object = field(repr=False)
    prescribe: Direction = Direction.INCOMING
    threshold_mode: bool = False
    mode_cutoff: int | None = None
    threshold_tol: float | None = None

    @property
    def augmented(self):
        return bool(self.beta)

    @property
    def n_cells(self):
        return self.mesh.n_cells

    @property
    def M(self):
        return self.basis.M

    @property
    def M_prime(self):
        return self.basis.M_prime

    @property
    def tail_attenuation(self):
        return max((c.tail_attenuation for c in self.closures), default=0.0)

    @cached_property
    def _layout(self):
        offsets, size = _offsets(self.mesh, self.closures)
        columns = np.array([offsets[ci] + li for ci, li in self.basis.slots], dtype=int)
        return offsets, size, columns

    @property
    def columns(self):
        """
        Unknown index of the explicit amplitude of every global wave.
        """
        return self._layout[2]

    @property
    def scales(self):
        return np.array(
            [_unknown_function(self.closures[ci].captured[li], self.prescribe)[1] for ci, li in self.basis.slots]
        )

    @cached_property
    def lu(self):
        try:
            return splu(self.matrix)
        except RuntimeError as e:
            raise ResonanceError(f"Junction system is singular at k={self.k}: {e}") from e

    @cached_property
    def mirrored(self):
        """
        The same problem with outgoing amplitudes prescribed and incoming ones unknown.
        """
        prescribe = Direction.OUTGOING if self.prescribe is Direction.INCOMING else Direction.INCOMING
        matrix = _assemble_matrix(self.mesh, self.closures, self.coefficient, prescribe)
        return replace(self, matrix=matrix, prescribe=prescribe)

    def right_hand_side(self, amplitudes, cell_rhs=None):
        """
        h^2-scaled right-hand sides for prescribed amplitudes of shape (M', n_rhs).
        """
        amplitudes = np.atleast_2d(np.asarray(amplitudes, dtype=complex).T).T
        offsets, size, _ = self._layout
        rhs = np.zeros((size, amplitudes.shape[1]), dtype=complex)
        if cell_rhs is not None:
            rhs[: self.n_cells] += np.asarray(cell_rhs).reshape(self.n_cells, -1)
        for g, (ci, li) in enumerate(self.basis.slots):
            closure = self.closures[ci]
            mode = closure.captured[li]
            p_last, p_ghost = _prescribed_function(mode, self.prescribe)
            last = self.mesh.arm_cells[closure.arm_index][:, -1]
            rhs[last] += np.outer(mode.phi * p_ghost, amplitudes[g])
            rhs[offsets[ci] + li] += p_last * amplitudes[g]
        return rhs

    def volume_data_for(self, cell_values, outgoing):
        """
        The volume data f that a given discrete field with given outgoing amplitudes
        satisfies exactly, with no incoming waves.
        """
        if self.prescribe is not Direction.INCOMING:
            raise ValueError("volume_data_for needs a problem with incoming amplitudes prescribed")
        x = np.zeros(self.matrix.shape[0], dtype=complex)
        x[: self.n_cells] = cell_values
        x[self.columns] = np.asarray(outgoing) * self.scales
        return (self.matrix @ x)[: self.n_cells] / self.h**2

    def solve(self, rhs):
        x = self.lu.solve(rhs)
        scale = max(float(np.linalg.norm(rhs)), np.finfo(float).tiny)
        residual = float(np.linalg.norm(self.matrix @ x - rhs)) / scale
        if not np.isfinite(residual) or residual > _defaults.RESONANCE_RESIDUAL:
            raise ResonanceError(
                f"Junction solve at k={self.k} has relative residual {residual:.2e}; k is probably a resonance"
            )
        return x, residual


def _check_continuous_thresholds(geometry, k, tol, threshold_mode):
    for arm in geometry.arms:
        count = int(np.ceil(k * arm.width / np.pi)) + 2
        for n, thr in enumerate(arm_thresholds(arm.section, count, grid_step=arm.width / (4 * count))):
            if abs(k * k - thr * thr) < tol:
                message = f"k={k} sits on threshold {thr:.12g} of arm {arm.arm_id} (mode {n})"
                if not threshold_mode:
                    raise ThresholdCollisionError(message, mu=thr * thr)
                logger.warning(message)


def assemble(
    geometry,
    k,
    gamma=None,
    beta=None,
    divisions=None,
    h=None,
    mode_cutoff=None,
    threshold_mode=False,
    threshold_tol=None,
):
    """
    Build the truncated junction system at wavenumber k. With beta the basis is
    augmented by the evanescent modes with gamma <= kappa < beta.
    """
    if not k > 0:
        raise ValueError(f"k must be positive, got {k}")
    h = h or geometry.default_step(divisions)
    tol = threshold_tol if threshold_tol is not None else _defaults.THRESHOLD_TOL_FACTOR * k * k
    _check_continuous_thresholds(geometry, k, tol, threshold_mode)
    mesh = build_mesh(geometry, h)
    if gamma is None:
        gamma = 0.5 * smallest_evanescent_rate(geometry.arms, k, h)
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    if beta and not beta > gamma:
        raise ValueError(f"beta={beta} must exceed gamma={gamma}")
    closures = tuple(
        build_closure(arm, a, k, h, gamma, beta, mode_cutoff, threshold_mode, tol)
        for a, arm in enumerate(geometry.arms)
    )
    coefficient = _cell_coefficient(mesh, k)
    basis = _global_basis(closures)
    matrix = _assemble_matrix(mesh, closures, coefficient, Direction.INCOMING)
    logger.info(
        f"Assembled {geometry.name} at k={k}, h={h}: {matrix.shape[0]} unknowns, M={basis.M}, M'={basis.M_prime}"
    )
    return DiscreteProblem(
        geometry, float(k), h, float(gamma), beta or None, mesh, closures, coefficient, basis, matrix,
        threshold_mode=threshold_mode, mode_cutoff=mode_cutoff, threshold_tol=threshold_tol,
    )


def reassemble(problem, k=None, beta=None, gamma=None):
    """
    The same geometry and mesh at another wavenumber or rate; gamma is kept unless k changes.
    """
    k = problem.k if k is None else k
    if gamma is None and k == problem.k:
        gamma = problem.gamma
    return assemble(
        problem.geometry, k, gamma=gamma, beta=beta, h=problem.h, mode_cutoff=problem.mode_cutoff,
        threshold_mode=problem.threshold_mode, threshold_tol=problem.threshold_tol,
    )


def _remainder_norm(problem, cells, a, b):
    """
    Largest ratio, over arms, of the field left at the last column after removing
    the captured waves to the field on the arm.
    """
    worst = 0.0
    for closure in problem.closures:
        ids = problem.mesh.arm_cells[closure.arm_index]
        column = cells[ids[:, -1]].copy()
        for g, (ci, li) in enumerate(problem.basis.slots):
            if ci != closure.arm_index:
                continue
            mode = closure.captured[li]
            column -= mode.phi * (a[g] * mode.inner[0] + b[g] * mode.outer[0])
        scale = float(np.max(np.linalg.norm(cells[ids], axis=0)))
        if scale > 0:
            worst = max(worst, float(np.linalg.norm(column)) / scale)
    return worst


def _split(problem, x, prescribed):
    """
    Field, unknown amplitudes and decaying amplitudes of one solution column.
    """
    offsets = problem._layout[0]
    unknown = x[problem.columns] / problem.scales
    decaying = {}
    for closure, offset in zip(problem.closures, offsets):
        start = offset + len(closure.captured)
        decaying[closure.arm_id] = x[start : start + len(closure.decaying)]
    if problem.prescribe is Direction.INCOMING:
        a, b = prescribed, unknown
    else:
        a, b = unknown, prescribed
    cells = x[: problem.n_cells]
    return cells, a, b, decaying


def _evaluate_data(problem, f, g):
    """
    h^2-scaled cell right-hand side from volume data f and wall data g.
    """
    mesh = problem.mesh
    h = mesh.h
    rhs = np.zeros(mesh.n_cells, dtype=complex)
    if f is not None:
        values = f(*mesh.centers) if callable(f) else np.asarray(f)
        rhs += h * h * values
    if g is not None:
        for d, link in enumerate(mesh.links):
            neumann, dirichlet = link == NEUMANN_WALL, link == DIRICHLET_WALL
            if not (neumann.any() or dirichlet.any()):
                continue
            gx, gy = mesh.face_midpoints(d)
            values = np.asarray(g(gx, gy), dtype=complex) * np.ones(mesh.n_cells)
            rhs += np.where(neumann, h * values, 0) + np.where(dirichlet, 2 * values, 0)
    return rhs


def solve_with_incoming(problem, a, f=None, g=None):
    """
    The junction field for prescribed incoming amplitudes a (length M'), with optional
    volume data f and wall data g, and its outgoing and decaying amplitudes.
    """
    if problem.prescribe is not Direction.INCOMING:
        problem = problem.mirrored
    return _solve_one(problem, a, f, g)


def solve_with_outgoing(problem, b):
    """
    The junction field for prescribed outgoing amplitudes b, with unknown incoming ones.
    """
    if problem.prescribe is not Direction.OUTGOING:
        problem = problem.mirrored
    return _solve_one(problem, b, None, None)


def _solve_one(problem, amplitudes, f, g):
    amplitudes = np.asarray(amplitudes, dtype=complex)
    if amplitudes.shape != (problem.M_prime,):
        raise ValueError(f"Expected {problem.M_prime} amplitudes, got shape {amplitudes.shape}")
    cell_rhs = _evaluate_data(problem, f, g) if (f is not None or g is not None) else None
    rhs = problem.right_hand_side(amplitudes, cell_rhs)[:, 0]
    x, residual = problem.solve(rhs)
    cells, a, b, decaying = _split(problem, x, amplitudes)
    field_ = JunctionField(problem.mesh, cells, problem.k)
    amps = AmplitudeVector(
        a, b, decaying, _remainder_norm(problem, cells, a, b), problem.tail_attenuation, residual
    )
    return field_, amps


def response_matrix(problem, prescribed=Direction.INCOMING):
    """
    Unknown amplitudes for every unit prescribed amplitude, as columns of an (M', M') matrix,
    together with the cell values of the solutions.
    """
    if problem.prescribe is not prescribed:
        problem = problem.mirrored
    n = problem.M_prime
    if not n:
        return np.zeros((0, 0), dtype=complex), np.zeros((problem.n_cells, 0), dtype=complex)
    rhs = problem.right_hand_side(np.eye(n))
    x, _ = problem.solve(rhs)
    return x[problem.columns] / problem.scales[:, None], x[: problem.n_cells]


def extract_amplitudes(field_, basis, positions=None):
    """
    Incoming and outgoing amplitudes of a field from flux pairings with the basis,
    a_j = i q(u, v_j^+) and b_j = -i q(u, v_j^-), taken near the truncation of every arm.
    """
    fields = field_.arm_fields() if isinstance(field_, JunctionField) else dict(field_)
    a = np.zeros(len(basis.incoming), dtype=complex)
    b = np.zeros(len(basis.outgoing), dtype=complex)
    residual = 0.0
    for j, (v_in, v_out) in enumerate(zip(basis.incoming, basis.outgoing)):
        u = fields[v_in.arm_id]
        t = u.t
        R, second = positions.get(v_in.arm_id) if positions else (t[-2], t[max(0, len(t) - 4)])
        p_in = flux_pairing(u, v_in, R, u.dt, second)
        p_out = flux_pairing(u, v_out, R, u.dt, second)
        a[j], b[j] = 1j * p_in.value, -1j * p_out.value
        residual = max(residual, p_in.quadrature_residual, p_out.quadrature_residual)
    size = max(1.0, float(np.max(np.abs(np.concatenate([a, b])), initial=0.0)))
    if residual > _defaults.EXTRACTION_RESIDUAL_WARN * size:
        logger.warning(
            f"Amplitude extraction residual {residual:.2e}: field is not a clean modal sum near the truncation"
        )
    return AmplitudeVector(a, b, residual=residual)


def decaying_kernel_search(problem, count=1, side="right"):
    """
    The smallest singular values of the system matrix, relative to its 1-norm, from
    the largest eigenvalues of (A^H A)^-1 (right vectors) or (A A^H)^-1 (left vectors).
    """
    matrix = problem.matrix
    n = matrix.shape[0]
    scale = float(sparse_norm(matrix, 1))
    try:
        lu = problem.lu
    except ResonanceError:
        return KernelSearch(np.zeros(1), np.zeros(1), np.zeros((n, 0)), scale)
    if side == "right":
        def apply(x):
            return lu.solve(lu.solve(np.asarray(x, dtype=complex), trans="H"))
    else:
        def apply(x):
            return lu.solve(lu.solve(np.asarray(x, dtype=complex)), trans="H")
    op = LinearOperator((n, n), matvec=apply, dtype=complex)
    count = max(1, min(count, n - 2))
    vals, vecs = eigsh(op, k=count, which="LM", v0=np.ones(n, dtype=complex) / np.sqrt(n), tol=1e-10)
    order = np.argsort(vals)[::-1]
    sigma = 1.0 / np.sqrt(np.abs(vals[order]))
    return KernelSearch(sigma, sigma / scale, vecs[:, order], scale)


def _leakage(problem, cell_rhs):
    worst = 0.0
    total = max(float(np.linalg.norm(cell_rhs)), np.finfo(float).tiny)
    for ids in problem.mesh.arm_cells:
        near = ids[:, -LEAKAGE_COLUMNS:]
        worst = max(worst, float(np.linalg.norm(cell_rhs[near])) / total)
    return worst


def _bordered_solve(problem, rhs, left):
    """
    Solution orthogonal to the decaying kernel r of A, from the nonsingular system
    [[A, l], [r^H, 0]] with l the left kernel vector.
    """
    right = decaying_kernel_search(problem, count=1, side="right").vectors[:, 0]
    bordered = sparse.bmat(
        [[problem.matrix, sparse.csc_matrix(left[:, None])], [sparse.csc_matrix(right.conj()[None, :]), None]],
        format="csc",
    )
    extended = np.append(rhs, 0.0)
    try:
        y = splu(bordered).solve(extended)
    except RuntimeError as e:
        raise ResonanceError(f"Bordered junction system is singular at k={problem.k}: {e}") from e
    residual = float(np.linalg.norm(bordered @ y - extended)) / max(float(np.linalg.norm(rhs)), np.finfo(float).tiny)
    if not np.isfinite(residual) or residual > _defaults.RESONANCE_RESIDUAL:
        raise ResonanceError(f"Bordered junction solve at k={problem.k} has relative residual {residual:.2e}")
    logger.debug(f"Bordered solve at k={problem.k}: multiplier {abs(y[-1]):.2e}")
    return y[:-1]


def solve_radiation(problem, f=None, g=None, check_solvability=True):
    """
    The outgoing solution of the problem with data (f, g) and no incoming waves. The
    outgoing amplitudes come out twice: from flux pairings near the truncation and
    from the volume identity b_k = i (F, X_k), X_k the solution with outgoing
    amplitudes e_k.
    """
    if problem.augmented:
        raise ValueError("Radiation solves use the classical basis; assemble without beta")
    if problem.prescribe is not Direction.INCOMING:
        problem = problem.mirrored
    cell_rhs = _evaluate_data(problem, f, g)
    leakage = _leakage(problem, cell_rhs)
    if leakage > 0:
        logger.warning(f"Data reaches the last {LEAKAGE_COLUMNS} arm columns (fraction {leakage:.2e})")

    rhs = problem.right_hand_side(np.zeros(problem.M_prime), cell_rhs)[:, 0]
    left = None
    if check_solvability:
        kernel = decaying_kernel_search(problem, count=1, side="left")
        if kernel.relative[0] < _defaults.KERNEL_TOL:
            if not kernel.vectors.shape[1]:
                raise ResonanceError(f"Junction system is exactly singular at k={problem.k}")
            left = kernel.vectors[:, 0]
            z = left[: problem.n_cells]
            norm = max(np.linalg.norm(z) * np.linalg.norm(cell_rhs), np.finfo(float).tiny)
            overlap = abs(np.vdot(z, cell_rhs)) / norm
            if overlap > 1e-6:
                raise SolvabilityError(
                    f"Data is not orthogonal to the decaying solution at k={problem.k} (overlap {overlap:.2e})"
                )
            logger.warning(f"k={problem.k} carries a decaying solution; solving in its complement")

    x = problem.solve(rhs)[0] if left is None else _bordered_solve(problem, rhs, left)
    cells, a, b, decaying = _split(problem, x, np.zeros(problem.M_prime))
    field_ = JunctionField(problem.mesh, cells, problem.k)
    b_flux = extract_amplitudes(field_, problem.basis).outgoing

    _, x_cells = response_matrix(problem, Direction.OUTGOING)
    b_volume = 1j * (cell_rhs @ np.conj(x_cells))
    agreement = float(np.max(np.abs(b_flux - b_volume), initial=0.0))
    logger.info(f"Radiation solve at k={problem.k}: flux/volume amplitude agreement {agreement:.2e}")
    return RadiationSolution(field_, b_flux, b_volume, agreement, leakage)

