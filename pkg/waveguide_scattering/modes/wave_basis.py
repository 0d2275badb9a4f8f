"""
Power-exponential waves on an arm, the energy-flux form q, and flux-normalized bases.

Orientation: t increases towards infinity along the arm and

    q(u, v) = integral over the section of (d_t u * conj(v) - u * d_t conj(v)) dy

so that e^{+ikt} carries energy outwards. Incoming waves have i*q(u, u) > 0,
outgoing waves i*q(u, u) < 0, and a normalized basis satisfies
q(u_j^+, u_h^+) = -i delta, q(u_j^-, u_h^-) = +i delta, q(u_j^+, u_h^-) = 0.

With a mesh step the form is the discrete Wronskian across one cell,
sum_y h_y [u(R + s) conj v(R) - u(R) conj v(R + s)] / s, which is exactly
independent of R for any two solutions of the 3-point scheme.
"""

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field, replace
from enum import Enum
from math import factorial

import numpy as np
from scipy.linalg import eigh

from .. import _defaults
from ..errors import BasisError

logger = logging.getLogger(__name__)


class Direction(str, Enum):
    INCOMING = "incoming"
    OUTGOING = "outgoing"
    UNCLASSIFIED = "unclassified"


class ArmWave(ABC):
    """
    Anything that can be sampled on the cross-sections of one arm.
    """

    arm_id: int
    grid_step: float
    mesh_step: float | None

    @abstractmethod
    def values(self, t):
        """
        Transverse samples at t; an array of t gives shape (n_y, n_t).
        """

    def t_derivative(self, t):
        raise NotImplementedError(f"{type(self).__name__} has no analytic t-derivative")

    def support(self):
        return (0.0, np.inf)

    @property
    def transverse_index(self):
        return None

    def longitudinal(self, t, phi):
        return self.grid_step * np.tensordot(phi, self.values(t), axes=([0], [0]))


@dataclass(frozen=True, eq=False)
class WaveSpec(ArmWave):
    """
    u(y, t) = normalization * exp(i lam t) * sum_l (i t)^l / l! * poly_coeffs[l](y)

    poly_coeffs[l] holds phi^(sigma - l); only phi^(0) (the eigenfunction) is nonzero
    for the scalar pencil, so the chain at a threshold is (phi, i t phi).
    """

    arm_id: int
    lam: complex
    chain: tuple
    poly_coeffs: tuple = field(repr=False)
    phi: np.ndarray = field(repr=False)
    direction: Direction = Direction.UNCLASSIFIED
    normalization: complex = 1.0
    grid_step: float = 1.0
    index: int = 0
    mu: float = 0.0
    mesh_step: float | None = None

    def __post_init__(self):
        if len(self.poly_coeffs) != self.chain[0] + 1:
            raise ValueError(
                f"poly_coeffs has {len(self.poly_coeffs)} terms, chain {self.chain} needs {self.chain[0] + 1}"
            )

    @property
    def rate(self):
        return self.lam.imag

    @property
    def transverse_index(self):
        return self.index

    @property
    def label(self):
        return f"arm{self.arm_id}/n{self.index}/lam={self.lam:.6g}/sigma={self.chain[0]}"

    def _evaluate(self, t, derivative):
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        phase = np.exp(1j * self.lam * t)
        il = 1j * self.lam
        out = np.zeros((len(self.phi), len(t)), dtype=complex)
        for l, coeff in enumerate(self.poly_coeffs):
            if not np.any(coeff):
                continue
            p = (1j * t) ** l / factorial(l)
            dp = 1j * (1j * t) ** (l - 1) / factorial(l - 1) if l >= 1 else np.zeros_like(t)
            ddp = -((1j * t) ** (l - 2)) / factorial(l - 2) if l >= 2 else np.zeros_like(t)
            if derivative == 0:
                g = p
            elif derivative == 1:
                g = il * p + dp
            else:
                g = il * il * p + 2 * il * dp + ddp
            out += np.outer(coeff, g * phase)
        out *= self.normalization
        return out[:, 0] if scalar else out

    def values(self, t):
        return self._evaluate(t, 0)

    def t_derivative(self, t):
        return self._evaluate(t, 1)

    def t_second_derivative(self, t):
        return self._evaluate(t, 2)

    def scaled(self, factor, direction=None):
        return replace(
            self, normalization=self.normalization * factor, direction=direction or self.direction
        )


@dataclass(frozen=True, eq=False)
class WaveCombination(ArmWave):
    """
    A finite linear combination sum c_m * w_m of waves on the same arm.
    """

    terms: tuple
    direction: Direction = Direction.UNCLASSIFIED
    label: str = ""

    def __post_init__(self):
        if not self.terms:
            raise ValueError("A wave combination needs at least one term")
        arms = {w.arm_id for _, w in self.terms}
        if len(arms) != 1:
            raise ValueError(f"Wave combination mixes arms {sorted(arms)}")

    @property
    def arm_id(self):
        return self.terms[0][1].arm_id

    @property
    def grid_step(self):
        return self.terms[0][1].grid_step

    @property
    def mesh_step(self):
        return self.terms[0][1].mesh_step

    @property
    def transverse_index(self):
        indices = {w.transverse_index for _, w in self.terms}
        return indices.pop() if len(indices) == 1 else None

    @property
    def waves(self):
        return [w for _, w in self.terms]

    def support(self):
        lows, highs = zip(*(w.support() for _, w in self.terms))
        return (max(lows), min(highs))

    def values(self, t):
        return sum(c * w.values(t) for c, w in self.terms)

    def t_derivative(self, t):
        return sum(c * w.t_derivative(t) for c, w in self.terms)

    def t_second_derivative(self, t):
        return sum(c * w.t_second_derivative(t) for c, w in self.terms)

    def scaled(self, factor, direction=None):
        return WaveCombination(
            tuple((factor * c, w) for c, w in self.terms), direction or self.direction, self.label
        )


def combine(terms, direction=Direction.UNCLASSIFIED, label=""):
    return WaveCombination(tuple((complex(c), w) for c, w in terms), direction, label)


@dataclass(frozen=True, eq=False)
class GridField(ArmWave):
    """
    Samples of a field on an arm: values[m, i] at y_m and t_i = t0 + i*dt.
    """

    arm_id: int
    t0: float
    dt: float
    samples: np.ndarray = field(repr=False)
    grid_step: float = 1.0
    mesh_step: float | None = None

    def __post_init__(self):
        if self.samples.ndim != 2:
            raise ValueError("GridField samples must be a 2-D (n_y, n_t) array")

    @property
    def t(self):
        return self.t0 + self.dt * np.arange(self.samples.shape[1])

    def support(self):
        return (self.t0, self.t0 + self.dt * (self.samples.shape[1] - 1))

    def index_of(self, t):
        i = int(round((t - self.t0) / self.dt))
        if not 0 <= i < self.samples.shape[1] or abs(self.t0 + i * self.dt - t) > 1e-9 * max(1.0, abs(t)):
            raise ValueError(f"t={t} is not a sample position of the field on arm {self.arm_id}")
        return i

    def values(self, t):
        if np.ndim(t) == 0:
            return self.samples[:, self.index_of(t)]
        return self.samples[:, [self.index_of(s) for s in t]]

    def t_derivative(self, t):
        # fourth-order one-sided differences
        i = self.index_of(t)
        n_t = self.samples.shape[1]
        weights = np.array([-25.0, 48.0, -36.0, 16.0, -3.0]) / (12 * self.dt)
        if n_t < 5:
            raise ValueError("At least 5 samples along the arm are needed for a t-derivative")
        if i + 4 < n_t:
            return self.samples[:, i : i + 5] @ weights
        return -(self.samples[:, i - 4 : i + 1][:, ::-1] @ weights)

    def scaled(self, factor, direction=None):
        return replace(self, samples=self.samples * factor)


@dataclass(frozen=True)
class FluxPairing:
    value: complex
    position: float
    quadrature_residual: float


def _mesh_step(u, v, mesh_step):
    if mesh_step is not None:
        return mesh_step
    steps = {w.mesh_step for w in (u, v) if w.mesh_step is not None}
    if len(steps) > 1 and max(steps) - min(steps) > 1e-12 * max(steps):
        raise ValueError(f"Arguments were built on different mesh steps {sorted(steps)}")
    return steps.pop() if steps else None


def _flux_value(u, v, R, mesh_step):
    h = u.grid_step
    if mesh_step is None:
        uR, vR = u.values(R), v.values(R)
        return complex(h * np.sum(u.t_derivative(R) * np.conj(vR) - uR * np.conj(v.t_derivative(R))))
    u0, v0 = u.values(R), v.values(R)
    u1, v1 = u.values(R + mesh_step), v.values(R + mesh_step)
    return complex(h * np.sum(u1 * np.conj(v0) - u0 * np.conj(v1)) / mesh_step)


def _inside(waves, R, step):
    reach = R + (step or 0.0)
    return all(w.support()[0] - 1e-12 <= R and reach <= w.support()[1] + 1e-12 for w in waves)


def _grid_step_of(waves):
    steps = [w.dt for w in waves if isinstance(w, GridField)]
    return min(steps) if steps else None


def default_position(u, v=None, mesh_step=None):
    waves = [u] if v is None else [u, v]
    lo = max(w.support()[0] for w in waves)
    hi = min(w.support()[1] for w in waves) - (mesh_step or 0.0)
    dt = _grid_step_of(waves)
    if dt is None:
        return max(lo, min(_defaults.FLUX_POSITION, hi))
    # a sample position near the middle of the common window
    base = next(w for w in waves if isinstance(w, GridField))
    return base.t0 + dt * round((0.5 * (lo + hi) - base.t0) / dt)


def flux_pairing(u, v, R=None, mesh_step=None, second_position=None):
    """
    q(u, v) on the cross-section t = R of a common arm, with the variation of the
    value over a second cross-section as a quadrature residual.
    """
    if u.arm_id != v.arm_id:
        raise ValueError(f"Cannot pair waves on different arms ({u.arm_id} and {v.arm_id})")
    mesh_step = _mesh_step(u, v, mesh_step)
    if R is None:
        R = default_position(u, v, mesh_step)
    if not _inside((u, v), R, mesh_step):
        raise ValueError(f"Cross-section t={R} is outside the support of the fields on arm {u.arm_id}")
    value = _flux_value(u, v, R, mesh_step)

    if second_position is None:
        dt = _grid_step_of((u, v))
        candidates = (R + 2 * dt, R - 2 * dt) if dt else (R + 1.0, R - 1.0)
        second_position = next((c for c in candidates if _inside((u, v), c, mesh_step)), None)
    if second_position is None:
        residual = 0.0
    else:
        residual = abs(_flux_value(u, v, second_position, mesh_step) - value)
    return FluxPairing(value, R, residual)


def pairing_matrix(left, right, R=None, mesh_step=None):
    out = np.zeros((len(left), len(right)), dtype=complex)
    for i, u in enumerate(left):
        for j, v in enumerate(right):
            if u.arm_id == v.arm_id:
                out[i, j] = flux_pairing(u, v, R, mesh_step).value
    return out


def classify(wave, R=None, mesh_step=None):
    """
    Incoming if i*q(u, u) > 0, Outgoing if < 0, Unclassified for (numerically) null flux.
    """
    s = (1j * flux_pairing(wave, wave, R, mesh_step).value).real
    if abs(s) < _defaults.NULL_FLUX_TOL:
        logger.warning(f"Wave {getattr(wave, 'label', wave)} carries no energy flux: unclassified")
        return Direction.UNCLASSIFIED
    return Direction.INCOMING if s > 0 else Direction.OUTGOING


def make_wave(point, chain=(0, 0)):
    """
    The power-exponential wave of a pencil point with chain indices (sigma, j).
    """
    sigma, j = chain
    if not 0 <= sigma < point.chain_length or not 0 <= j < point.multiplicity:
        raise ValueError(
            f"Chain indices {chain} are invalid for a point with chain length {point.chain_length} "
            f"and multiplicity {point.multiplicity}"
        )
    zero = np.zeros_like(point.phi)
    poly = tuple(point.phi if sigma - l == 0 else zero for l in range(sigma + 1))
    direction = Direction.UNCLASSIFIED
    if point.chain_length == 1 and point.lam.imag == 0:
        direction = Direction.OUTGOING if point.lam.real > 0 else Direction.INCOMING
    return WaveSpec(
        arm_id=point.arm_id,
        lam=complex(point.lam),
        chain=(sigma, j),
        poly_coeffs=poly,
        phi=point.phi,
        direction=direction,
        grid_step=point.grid_step,
        index=point.transverse_index,
        mu=point.mu,
        mesh_step=point.mesh_step,
    )


def waves_in_strip(pencil, rate):
    """
    Every chain member of every pencil point with |Im lam| < rate.
    """
    waves = []
    for point in pencil.strip(rate):
        for j in range(point.multiplicity):
            for sigma in range(point.chain_length):
                waves.append(make_wave(point, (sigma, j)))
    return waves


def limit_residual(wave, k, t, transverse=None):
    """
    Max norm over the samples t of (-d_tt - d_yy - p - k^2) u, with the transverse
    part applied either through a matrix or through the stored eigenvalue.
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    u = wave.values(t)
    if transverse is None:
        ty = wave.mu * u
    else:
        ty = transverse @ u
    r = -wave.t_second_derivative(t) + ty - k * k * u
    return float(np.max(np.sqrt(wave.grid_step * np.sum(np.abs(r) ** 2, axis=0))))


@dataclass(frozen=True)
class SignRecord:
    label: str
    partner: str
    sign: int


@dataclass(frozen=True, eq=False)
class WaveBasis:
    incoming: tuple
    outgoing: tuple
    signs: tuple = ()
    position: float | None = None
    mesh_step: float | None = None

    @property
    def M(self):
        return len(self.incoming)

    @property
    def waves(self):
        return self.incoming + self.outgoing

    def pairing_matrix(self, R=None):
        waves = self.waves
        return pairing_matrix(waves, waves, R if R is not None else self.position, self.mesh_step)

    def canonical_deviation(self, R=None):
        expected = np.diag([-1j] * self.M + [1j] * self.M)
        if not self.M:
            return 0.0
        return float(np.max(np.abs(self.pairing_matrix(R) - expected)))


def _canonical_phase(coeffs):
    scale = np.max(np.abs(coeffs))
    first = np.flatnonzero(np.abs(coeffs) > 1e-12 * scale)[0]
    return coeffs * (np.conj(coeffs[first]) / abs(coeffs[first]))


def _group_key(wave):
    lam = getattr(wave, "lam", 0j)
    sigma = getattr(wave, "chain", (0, 0))[0]
    return (-lam.imag, -lam.real, sigma)


def _sign_records(group, G):
    records = []
    for i, w in enumerate(group):
        partner = i if abs(G[i, i]) > _defaults.NULL_FLUX_TOL else int(np.argmax(np.abs(G[i])))
        if abs(G[i, partner]) <= _defaults.NULL_FLUX_TOL:
            continue
        sign = 1 if G[i, partner].imag > 0 else -1
        records.append(SignRecord(getattr(w, "label", str(i)), getattr(group[partner], "label", str(partner)), sign))
    return records


def _arm_order(wave):
    index = wave.transverse_index
    return (wave.arm_id, -1 if index is None else index)


def normalize_basis(waves, R=None, mesh_step=None):
    """
    Flux-orthonormalize the waves of a strip into u_1^+..u_M^+, u_1^-..u_M^-.

    Waves are grouped by (arm, transverse index); in each group the hermitian
    matrix P = i*G of flux pairings is diagonalized, positive eigenvalues giving
    incoming and negative eigenvalues outgoing combinations.
    """
    groups = {}
    for w in waves:
        groups.setdefault((w.arm_id, w.transverse_index), []).append(w)
    incoming, outgoing, signs = [], [], []
    for key in sorted(groups, key=lambda k: (k[0], -1 if k[1] is None else k[1])):
        group = sorted(groups[key], key=_group_key)
        G = pairing_matrix(group, group, R, mesh_step)
        P = 1j * G
        P = (P + P.conj().T) / 2
        d, V = eigh(P)
        scale = max(1.0, float(np.max(np.abs(d))))
        if np.min(np.abs(d)) < 1e-8 * scale:
            raise BasisError(
                f"Flux pairing matrix of arm {key[0]}, mode {key[1]} is singular "
                f"(smallest |eigenvalue| {np.min(np.abs(d)):.3g}); k may be too close to a threshold"
            )
        signs.extend(_sign_records(group, G))
        for value, vector in zip(d, V.T):
            coeffs = _canonical_phase(np.conj(vector) / np.sqrt(abs(value)))
            direction = Direction.INCOMING if value > 0 else Direction.OUTGOING
            terms = tuple(
                (complex(c), w) for c, w in zip(coeffs, group) if abs(c) > 1e-14 * np.max(np.abs(coeffs))
            )
            wave = WaveCombination(terms, direction, f"arm{key[0]}/n{key[1]}/{direction.value}")
            (incoming if direction is Direction.INCOMING else outgoing).append(wave)
    if len(incoming) != len(outgoing):
        raise BasisError(f"Strip gives {len(incoming)} incoming but {len(outgoing)} outgoing waves")
    # incoming for a group come out of eigh in descending |d| order; keep arm-major order instead
    incoming.sort(key=_arm_order)
    outgoing.sort(key=_arm_order)
    logger.debug(f"Normalized {len(waves)} waves into M={len(incoming)} pairs")
    return WaveBasis(tuple(incoming), tuple(outgoing), tuple(signs), R, mesh_step)


def flux_dual_pair(decaying, growing, R=None, mesh_step=None):
    """
    Rescale a decaying/growing pair so that q(decaying, growing) = i exactly.
    """
    q = flux_pairing(decaying, growing, R, mesh_step).value
    if abs(q) < _defaults.NULL_FLUX_TOL:
        raise BasisError(f"Decaying and growing waves on arm {decaying.arm_id} are not flux-coupled")
    s = np.sqrt(abs(q))
    return decaying.scaled(1 / s), growing.scaled(np.conj(1j * s / q))


def augmented_pairs(w_nu, w_minus_nu, R=None, mesh_step=None, tol=_defaults.DUAL_PAIR_TOL):
    """
    The incoming/outgoing combinations (w_nu -/+ w_-nu) / sqrt(2) of a flux-dual
    decaying/growing pair.
    """
    q = flux_pairing(w_nu, w_minus_nu, R, mesh_step).value
    if abs(q - 1j) > tol:
        raise BasisError(f"Waves are not flux-dual: q(w_nu, w_-nu) = {q:.6g}, expected i")
    c = 1 / np.sqrt(2)
    index = w_nu.transverse_index
    incoming = combine([(c, w_nu), (-c, w_minus_nu)], Direction.INCOMING, f"arm{w_nu.arm_id}/n{index}/incoming")
    outgoing = combine([(c, w_nu), (c, w_minus_nu)], Direction.OUTGOING, f"arm{w_nu.arm_id}/n{index}/outgoing")
    return incoming, outgoing
