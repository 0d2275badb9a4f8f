"""
Neumann-series waves for an arm whose coefficient stabilizes slowly.

For one transverse mode (phi, mu) the blended problem is the 3-point recurrence

    -(c[i+1] - 2 c[i] + c[i-1]) / dt^2 - (k_inf^2 - mu) c[i] - Delta_T(t_i) c[i] = f[i]

on t_i = t0 + i*dt. The limit part is inverted in a weighted class: the rate fixes
which roots of the limit recurrence are admissible at +infinity and which at
-infinity, and hence whether the inverse is a forward march, a backward march,
or a two-sided banded solve with exact decaying closures at both ends. This keeps
every intermediate quantity bounded without substituting the weight explicitly.

A wave z of the blended problem is the fixed point z = base + A^-1 Delta_T z.
"""

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import solve_banded
from scipy.signal import lfilter

from .. import _defaults
from ..errors import ContractionError, ThresholdCollisionError
from ..modes.wave_basis import ArmWave, Direction, GridField, WaveSpec, flux_dual_pair, flux_pairing, make_wave

logger = logging.getLogger(__name__)


class LimitModeSolver:
    """
    Inverse of the limit recurrence for one mode in the class selected by `rate`:
    solutions may grow like exp(-rate*t) at +infinity and must decay faster than
    exp(-rate*t) towards -infinity.
    """

    def __init__(self, nu2, rate, dt):
        self.nu2 = nu2
        self.rate = rate
        self.dt = dt
        self.a = 2.0 - dt * dt * nu2
        if abs(self.a) <= 2:
            s = np.sqrt(4.0 - self.a * self.a)
            roots = ((self.a + 1j * s) / 2, (self.a - 1j * s) / 2)
        else:
            s = np.sqrt(self.a * self.a - 4.0)
            roots = ((self.a - np.sign(self.a) * s) / 2, (self.a + np.sign(self.a) * s) / 2)
        # rho = exp(i lam dt), so Im lam = -log|rho| / dt
        growth = [-np.log(abs(r)) / dt for r in roots]
        for g in growth:
            if abs(g - rate) < 1e-12 * max(1.0, abs(rate)):
                raise ThresholdCollisionError(
                    f"Rate line {rate} passes through the pencil point {g:.12g}i of this mode", mu=None
                )
        self.gap = min(abs(g - rate) for g in growth)
        allowed_plus = [g > rate for g in growth]
        if all(allowed_plus):
            self.kind = "forward"
        elif not any(allowed_plus):
            self.kind = "backward"
        else:
            self.kind = "two-sided"
            self.rho_right = complex(roots[0] if allowed_plus[0] else roots[1])
            self.rho_left = complex(roots[1] if allowed_plus[0] else roots[0])

    def _march(self, f):
        c = np.zeros(len(f), dtype=complex)
        c[2:] = lfilter([-self.dt * self.dt], [1.0, -self.a, 1.0], f[1:-1])
        return c

    def solve(self, f):
        f = np.asarray(f, dtype=complex)
        if self.kind == "forward":
            return self._march(f)
        if self.kind == "backward":
            return self._march(f[::-1])[::-1]
        n = len(f)
        ab = np.zeros((3, n), dtype=complex)
        ab[0, 1:] = -1.0
        ab[1, :] = self.a
        ab[2, :-1] = -1.0
        ab[1, 0] -= 1.0 / self.rho_left
        ab[1, -1] -= self.rho_right
        return solve_banded((1, 1), ab, self.dt * self.dt * f)


def weighted_norm(c, t, rate, dt):
    """
    Discrete L2 norm of exp(rate*t)*c; c may be a profile or a (n_y, n_t) array.
    """
    weighted = np.exp(rate * t) * np.abs(c)
    return float(np.sqrt(dt * np.sum(weighted**2)))


def apply_blended(profile, blended, mu, t, dt):
    """
    The blended 3-point operator applied to a longitudinal profile, at interior samples.
    """
    out = np.zeros_like(profile)
    second = (profile[2:] - 2 * profile[1:-1] + profile[:-2]) / dt**2
    out[1:-1] = -second - (blended.coefficient(t[1:-1]) - mu) * profile[1:-1]
    return out


def _window(delta, source):
    """
    Samples from the first place the perturbation or the source acts to the end of the grid.
    """
    acting = np.flatnonzero((delta != 0) | (source != 0))
    return slice(int(acting[0]) if acting.size else 0, None)


def _fixed_point(solver, delta, base, source, t, tol, max_iterations, T):
    """
    x = base + A^-1 (source + Delta x). Returns (x, iterations, contraction ratio).
    Increments are measured on the window where Delta or the source acts.
    """
    if not np.any(delta) and not np.any(source):
        return base.astype(complex), 0, 0.0
    rate, dt = solver.rate, solver.dt
    window = _window(delta, source)
    tw = t[window]
    w = np.zeros_like(base, dtype=complex)
    diffs, ratios = [], []
    for q in range(1, max_iterations + 1):
        w_next = solver.solve(source + delta * (base + w))
        diff = weighted_norm((w_next - w)[window], tw, rate, dt)
        scale = weighted_norm((base + w_next)[window], tw, rate, dt)
        if diffs and diffs[-1] > 0:
            ratios.append(diff / diffs[-1])
            logger.debug(f"Neumann series iteration {q}: increment {diff:.3e}, ratio {ratios[-1]:.4f}")
        diffs.append(diff)
        w = w_next
        if diff <= tol * max(scale, np.finfo(float).tiny):
            break
        if q >= _defaults.CONTRACTION_CHECK_AFTER and ratios and ratios[-1] >= 1:
            raise ContractionError(ratios[-1], T)
    else:
        raise ContractionError(ratios[-1] if ratios else np.inf, T)
    return base + w, q, max(ratios) if ratios else 0.0


def _mode_data(wave):
    """
    (phi, mu, transverse index) of a wave living on a single transverse mode.
    """
    while not isinstance(wave, WaveSpec):
        if isinstance(wave, NeumannSeriesWave):
            return wave.phi, wave.mu, wave.index
        if not hasattr(wave, "terms") or wave.transverse_index is None:
            raise ValueError("Neumann-series waves need a base living on one transverse mode")
        wave = wave.terms[0][1]
    return wave.phi, wave.mu, wave.index


@dataclass(frozen=True, eq=False)
class NeumannSeriesWave(ArmWave):
    base: ArmWave
    blended: object
    rate: float
    t0: float
    dt: float
    phi: np.ndarray = field(repr=False)
    mu: float = 0.0
    index: int = 0
    profile: np.ndarray = field(default=None, repr=False)
    base_profile: np.ndarray = field(default=None, repr=False)
    iterations: int = 0
    contraction_ratio: float = 0.0
    residual: float = 0.0
    tail_ratio: float = 0.0
    direction: Direction = Direction.UNCLASSIFIED
    label: str = ""

    @property
    def arm_id(self):
        return self.base.arm_id

    @property
    def grid_step(self):
        return self.base.grid_step

    @property
    def mesh_step(self):
        return self.dt

    @property
    def transverse_index(self):
        return self.index

    @property
    def t(self):
        return self.t0 + self.dt * np.arange(len(self.profile))

    def support(self):
        return (self.t0, self.t0 + self.dt * (len(self.profile) - 1))

    def _index(self, s):
        i = int(round((s - self.t0) / self.dt))
        if not 0 <= i < len(self.profile) or abs(self.t0 + i * self.dt - s) > 1e-9 * max(1.0, abs(s)):
            raise ValueError(f"t={s} is not a sample position of this Neumann-series wave")
        return i

    def values(self, t):
        if np.ndim(t) == 0:
            return self.phi * self.profile[self._index(t)]
        return np.outer(self.phi, self.profile[[self._index(s) for s in t]])

    def longitudinal(self, t, phi=None):
        if np.ndim(t) == 0:
            return self.profile[self._index(t)]
        return self.profile[[self._index(s) for s in t]]

    @property
    def correction(self):
        return GridField(
            self.arm_id, self.t0, self.dt, np.outer(self.phi, self.profile - self.base_profile), self.grid_step, self.dt
        )

    @property
    def full_field(self):
        return GridField(self.arm_id, self.t0, self.dt, np.outer(self.phi, self.profile), self.grid_step, self.dt)

    def scaled(self, factor, direction=None):
        return replace(
            self,
            base=self.base.scaled(factor),
            profile=self.profile * factor,
            base_profile=self.base_profile * factor,
            direction=direction or self.direction,
        )


def default_length(T, gap):
    return T + 3.0 + _defaults.TRUNCATION_DECAYS / max(gap, 1e-3)


def neumann_series_wave(
    blended,
    base_wave,
    rate,
    L=None,
    tol=_defaults.SERIES_TOL,
    mesh_step=None,
    t0=0.0,
    max_iterations=_defaults.SERIES_MAX_ITERATIONS,
):
    """
    The wave z = base + A_rate^-1 Delta_T z of the blended problem, computed by
    fixed-point iteration on the grid t0, t0 + dt, ..., up to L.
    """
    phi, mu, index = _mode_data(base_wave)
    dt = mesh_step or base_wave.mesh_step or _defaults.SERIES_STEP
    if base_wave.mesh_step is not None and abs(base_wave.mesh_step - dt) > 1e-12 * dt:
        raise ValueError(f"Base wave was built on mesh step {base_wave.mesh_step}, not {dt}")
    solver = LimitModeSolver(blended.k_infinity**2 - mu, rate, dt)
    if L is None:
        L = default_length(blended.T, solver.gap)
    n = int(np.ceil((L - t0) / dt)) + 1
    t = t0 + dt * np.arange(n)

    base_profile = np.asarray(base_wave.longitudinal(t, phi), dtype=complex)
    base_residual = apply_blended(base_profile, _LimitOnly(blended), mu, t, dt)
    base_scale = max(weighted_norm(base_profile, t, rate, dt) * blended.k_infinity**2, np.finfo(float).tiny)
    if weighted_norm(base_residual, t, rate, dt) > 1e-8 * base_scale:
        logger.warning(f"Base wave on arm {base_wave.arm_id} is not a solution of the discrete limit problem")

    delta = blended.delta(t)
    profile, iterations, ratio = _fixed_point(
        solver, delta, base_profile, np.zeros(n, dtype=complex), t, tol, max_iterations, blended.T
    )

    window = _window(delta, np.zeros(n))
    window_scale = weighted_norm(base_profile[window], t[window], rate, dt) * blended.k_infinity**2
    remaining = apply_blended(profile, blended, mu, t, dt)[window]
    residual = weighted_norm(remaining, t[window], rate, dt) / max(window_scale, np.finfo(float).tiny)
    correction = profile - base_profile
    support = np.flatnonzero(delta)
    tail_ratio = 0.0
    if support.size:
        middle = (support[0] + n) // 2
        total = weighted_norm(correction, t, rate, dt)
        if total > 0:
            tail_ratio = weighted_norm(correction[middle:], t[middle:], rate, dt) / total
    if tail_ratio > _defaults.TAIL_FRACTION:
        logger.warning(f"Neumann-series correction is not negligible near t={t[-1]:.3g} (tail {tail_ratio:.2e})")
    logger.info(
        f"Neumann-series wave on arm {base_wave.arm_id}, mode {index}: {iterations} iterations, "
        f"ratio {ratio:.4f}, residual {residual:.2e}"
    )
    return NeumannSeriesWave(
        base=base_wave,
        blended=blended,
        rate=rate,
        t0=t0,
        dt=dt,
        phi=phi,
        mu=mu,
        index=index,
        profile=profile,
        base_profile=base_profile,
        iterations=iterations,
        contraction_ratio=ratio,
        residual=residual,
        tail_ratio=tail_ratio,
        direction=getattr(base_wave, "direction", Direction.UNCLASSIFIED),
        label=getattr(base_wave, "label", ""),
    )


@dataclass(frozen=True)
class _LimitOnly:
    blended: object

    def coefficient(self, t):
        return np.full_like(np.asarray(t, dtype=float), self.blended.k_infinity**2)


@dataclass(frozen=True, eq=False)
class ModelWaveSet:
    incoming: tuple
    outgoing: tuple
    rate: float

    @property
    def M(self):
        return len(self.incoming)

    @property
    def waves(self):
        return self.incoming + self.outgoing


def neumann_series_basis(blended, basis, gamma, L=None, tol=_defaults.SERIES_TOL, mesh_step=None, t0=0.0):
    """
    z_j^+ and z_j^- built from a normalized basis u_j^+, u_j^- at rate -gamma.
    """
    incoming = tuple(neumann_series_wave(blended, u, -gamma, L, tol, mesh_step, t0) for u in basis.incoming)
    outgoing = tuple(neumann_series_wave(blended, u, -gamma, L, tol, mesh_step, t0) for u in basis.outgoing)
    return ModelWaveSet(incoming, outgoing, -gamma)


def _shared_grid(waves):
    first = waves[0]
    for w in waves[1:]:
        if len(w.profile) != len(first.profile) or abs(w.t0 - first.t0) > 1e-12 or abs(w.dt - first.dt) > 1e-15:
            raise ValueError("Waves must be built on the same longitudinal grid")
    return first


def pairing_positions(wave):
    """
    One cross-section inside the limit region and one beyond the blending window.
    """
    T = wave.blended.T
    start, end = wave.support()
    near_target = min(start + 1.5, max(start, T / 2))
    near = wave.t0 + wave.dt * round((near_target - wave.t0) / wave.dt)
    far_target = 0.5 * (max(T + 3.0, start) + end)
    far = wave.t0 + wave.dt * round((far_target - wave.t0) / wave.dt)
    return (near, min(far, end - wave.dt))


@dataclass(frozen=True, eq=False)
class PairingReport:
    positions: tuple
    matrices: tuple
    expected: np.ndarray
    max_deviation: float


def verify_pairings(waves, positions=None, expected=None):
    """
    Flux pairings of Neumann-series waves on two cross-sections, compared with the
    pairings of their base waves.
    """
    waves = list(waves)
    first = _shared_grid(waves)
    if positions is None:
        positions = pairing_positions(first)
    matrices = []
    for R in positions:
        m = np.array([[flux_pairing(u, v, R).value for v in waves] for u in waves])
        matrices.append(m)
    if expected is None:
        bases = [w.base for w in waves]
        R0 = positions[0]
        expected = np.array([[flux_pairing(u, v, R0, first.dt).value for v in bases] for u in bases])
    deviation = max(float(np.max(np.abs(m - expected))) for m in matrices) if waves else 0.0
    logger.info(f"Pairing deviation over {len(waves)} waves at t={positions}: {deviation:.2e}")
    return PairingReport(tuple(positions), tuple(matrices), expected, deviation)


def chain_rate(point, pencil, floor=None):
    """
    A rate strictly between Im lam of the point and the next lower pencil point.
    """
    lower = [p.lam.imag for p in pencil.points if p.lam.imag < point.lam.imag - 1e-12]
    if lower:
        bottom = max(lower)
    elif floor is not None:
        bottom = min(floor, point.lam.imag - 1e-3)
    else:
        bottom = point.lam.imag - 1.0
    return 0.5 * (bottom + point.lam.imag)


@dataclass(frozen=True, eq=False)
class ChainWaveSet:
    waves: tuple
    partners: tuple
    signs: tuple
    alpha: float
    beta: float


def _elementary_waves(pencil, alpha, beta):
    """
    Flux-normalized elementary waves with their dual partner and sign: real points
    are self-dual with q = +/- i, threshold chains pair (phi, i t phi), and evanescent
    points pair decaying with growing so that q(decaying, growing) = i.
    """
    chosen = [p for p in pencil.points if alpha < p.lam.imag < beta]
    entries = []
    by_index = {}
    for p in chosen:
        by_index.setdefault(p.transverse_index, []).append(p)
    for index in sorted(by_index):
        points = by_index[index]
        if points[0].is_threshold:
            w0, w1 = make_wave(points[0], (0, 0)), make_wave(points[0], (1, 0))
            start = len(entries)
            entries += [(points[0], w0, start + 1, 1), (points[0], w1, start, 1)]
            continue
        if points[0].lam.imag == 0:
            for p in points:
                w = make_wave(p)
                q = flux_pairing(w, w).value
                entries.append((p, w.scaled(1 / np.sqrt(abs(q))), len(entries), 1 if q.imag > 0 else -1))
            continue
        decaying = [p for p in points if p.lam.imag > 0]
        growing = [p for p in points if p.lam.imag < 0]
        if len(decaying) != len(growing):
            raise ValueError(f"Strip ({alpha}, {beta}) splits the evanescent pair of mode {index}")
        for pd, pg in zip(decaying, growing):
            d, g = flux_dual_pair(make_wave(pd), make_wave(pg))
            start = len(entries)
            entries += [(pd, d, start + 1, 1), (pg, g, start, 1)]
    return entries


def chain_wave_set(blended, pencil, alpha, beta, L=None, tol=_defaults.SERIES_TOL, t0=0.0):
    """
    Chain waves w_nu = u_nu + A_{alpha_nu}^-1 Delta_T w_nu for every pencil point
    with alpha < Im lam < beta, each at its own rate alpha_nu just below Im lam.
    """
    entries = _elementary_waves(pencil, alpha, beta)
    dt = pencil.mesh_step or _defaults.SERIES_STEP
    if L is None and entries:
        gaps = []
        for p, w, _, _ in entries:
            rate = chain_rate(p, pencil, alpha)
            gaps.append(LimitModeSolver(blended.k_infinity**2 - w.mu, rate, dt).gap)
        L = default_length(blended.T, min(gaps))
    waves = tuple(
        neumann_series_wave(blended, w, chain_rate(p, pencil, alpha), L, tol, dt, t0)
        for p, w, _, _ in entries
    )
    return ChainWaveSet(waves, tuple(e[2] for e in entries), tuple(e[3] for e in entries), alpha, beta)


@dataclass(frozen=True, eq=False)
class ChainExpansion:
    a: np.ndarray
    b: np.ndarray
    residual: float


def expand_in_chain_waves(z_basis, w_basis, R=None):
    """
    Coefficients of each chain wave in the z basis, w = sum_j (a_j z_j^+ + b_j z_j^-),
    from a_j = i q(w, z_j^+) and b_j = -i q(w, z_j^-).
    """
    w_waves = list(getattr(w_basis, "waves", w_basis))
    first = _shared_grid(list(z_basis.waves) + w_waves)
    if R is None:
        R = pairing_positions(first)[1]
    a = np.array([[1j * flux_pairing(w, z, R).value for z in z_basis.incoming] for w in w_waves])
    b = np.array([[-1j * flux_pairing(w, z, R).value for z in z_basis.outgoing] for w in w_waves])
    a = a.reshape(len(w_waves), z_basis.M)
    b = b.reshape(len(w_waves), z_basis.M)
    t, rate, dt = first.t, z_basis.rate, first.dt
    residual = 0.0
    for i, w in enumerate(w_waves):
        rebuilt = sum(a[i, j] * z.full_field.samples for j, z in enumerate(z_basis.incoming))
        rebuilt = rebuilt + sum(b[i, j] * z.full_field.samples for j, z in enumerate(z_basis.outgoing))
        scale = weighted_norm(w.full_field.samples, t, rate, dt)
        residual = max(residual, weighted_norm(w.full_field.samples - rebuilt, t, rate, dt) / scale)
    logger.info(f"Chain-wave expansion residual {residual:.2e}")
    return ChainExpansion(a, b, residual)


def volume_inner(F, wave):
    """
    (F, w) = sum over interior samples of dt * h_y * F * conj(w).
    """
    samples = wave.full_field.samples if isinstance(wave, NeumannSeriesWave) else wave.samples
    inner = F.samples[:, 1:-1] * np.conj(samples[:, 1:-1])
    return complex(F.dt * F.grid_step * np.sum(inner))


@dataclass(frozen=True, eq=False)
class ModelDecomposition:
    a: np.ndarray
    b: np.ndarray
    solution: GridField
    remainder: GridField
    remainder_norm: float
    tail_norm: float
    consistency: float

    @property
    def decays(self):
        return self.tail_norm <= _defaults.TAIL_FRACTION * max(self.remainder_norm, np.finfo(float).tiny)


def _solve_modes(blended, rhs, rate, spectrum, tol):
    """
    Mode-by-mode solution of the blended problem in the class selected by `rate`.
    """
    t = rhs.t
    coeffs = spectrum.project(rhs.samples)
    leftover = rhs.samples - spectrum.phi.T @ coeffs
    total = max(weighted_norm(rhs.samples, t, 0.0, rhs.dt), np.finfo(float).tiny)
    if weighted_norm(leftover, t, 0.0, rhs.dt) > 1e-8 * total:
        logger.warning("Right-hand side has components beyond the computed transverse modes; they are dropped")
    delta = blended.delta(t)
    out = np.zeros_like(rhs.samples, dtype=complex)
    for n, (mu, phi) in enumerate(spectrum.entries):
        if not np.any(coeffs[n]):
            continue
        solver = LimitModeSolver(blended.k_infinity**2 - mu, rate, rhs.dt)
        zero = np.zeros(len(t), dtype=complex)
        profile, _, _ = _fixed_point(
            solver, delta, zero, coeffs[n], t, tol, _defaults.SERIES_MAX_ITERATIONS, blended.T
        )
        out += np.outer(phi, profile)
    return GridField(rhs.arm_id, rhs.t0, rhs.dt, out, rhs.grid_step, rhs.dt)


def solve_model_problem(blended, rhs, gamma, spectrum, tol=_defaults.SERIES_TOL):
    """
    The solution of the blended problem with right-hand side `rhs` in the class
    growing at most like exp(gamma*t), mode by mode.
    """
    return _solve_modes(blended, rhs, -gamma, spectrum, tol)


def decompose_model_solution(blended, rhs, gamma, z_basis, spectrum, tol=_defaults.SERIES_TOL):
    """
    Split the solution u of the blended problem into sum_j (a_j z_j^+ + b_j z_j^-)
    plus a remainder decaying faster than exp(-gamma*t), with
    a_j = -i (F, z_j^+) and b_j = i (F, z_j^-).

    The remainder is solved for directly in the decaying class, where it is unique.
    `consistency` is the norm of u - wave part - remainder in the growing class,
    relative to u.
    """
    if z_basis.M:
        _shared_grid(list(z_basis.waves))
        z0 = z_basis.waves[0]
        if len(z0.profile) != rhs.samples.shape[1] or abs(z0.t0 - rhs.t0) > 1e-12 or abs(z0.dt - rhs.dt) > 1e-15:
            raise ValueError("Right-hand side and waves must share the same longitudinal grid")
    solution = solve_model_problem(blended, rhs, gamma, spectrum, tol)
    remainder = _solve_modes(blended, rhs, gamma, spectrum, tol)
    a = np.array([-1j * volume_inner(rhs, z) for z in z_basis.incoming])
    b = np.array([1j * volume_inner(rhs, z) for z in z_basis.outgoing])
    mismatch = solution.samples - remainder.samples
    for coeff, z in zip(np.concatenate([a, b]), z_basis.waves):
        mismatch -= coeff * z.full_field.samples

    t, dt = rhs.t, rhs.dt
    scale = weighted_norm(solution.samples, t, -gamma, dt)
    consistency = weighted_norm(mismatch, t, -gamma, dt) / scale if scale > 0 else 0.0
    norm = weighted_norm(remainder.samples, t, gamma, dt)
    half = len(t) // 2
    tail = weighted_norm(remainder.samples[:, half:], t[half:], gamma, dt)
    logger.info(
        f"Model-problem decomposition: |a|={np.linalg.norm(a):.4g}, |b|={np.linalg.norm(b):.4g}, "
        f"consistency {consistency:.2e}"
    )
    if consistency > _defaults.DECOMPOSITION_TOL:
        logger.warning(f"Model solution differs from waves plus remainder by {consistency:.2e}")
    return ModelDecomposition(a, b, solution, remainder, norm, tail, consistency)


@dataclass(frozen=True, eq=False)
class ChainDecomposition:
    coefficients: np.ndarray
    chain_set: ChainWaveSet


def decompose_in_chain_waves(rhs, chain_set):
    """
    Coefficients d_nu of the solution in the chain waves between two rate lines:
    d_nu = s_nu * i * (F, w_partner(nu)), where q(w_nu, w_partner(nu)) = s_nu * i.
    """
    d = np.array(
        [
            sign * 1j * volume_inner(rhs, chain_set.waves[partner])
            for partner, sign in zip(chain_set.partners, chain_set.signs)
        ]
    )
    return ChainDecomposition(d, chain_set)
