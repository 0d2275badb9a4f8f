"""
Classical and augmented scattering matrices of a junction.

With the incoming amplitudes of the global basis prescribed, the solution for
a = e_k is Z_k = v_k^+ + sum_j T_kj v_j^- up to decaying terms, so row k of T is
the vector of outgoing amplitudes of that solve. S = T^-1, and row m of S holds the
incoming amplitudes of X_m = v_m^- + sum_k S_mk v_k^+, which the solver can also
produce directly by prescribing outgoing amplitudes.
"""

import logging
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .. import _defaults
from ..errors import ResonanceError
from ..junction.solver import reassemble, response_matrix
from ..modes.wave_basis import Direction

logger = logging.getLogger(__name__)

# Largest condition number of T that is still inverted
CONDITION_LIMIT = 1e12


class MatrixKind(str, Enum):
    T_MATRIX = "T_matrix"
    S_MATRIX = "S_matrix"


@dataclass(frozen=True, eq=False)
class ScatteringMatrix:
    entries: np.ndarray = field(repr=False)
    M: int
    M_prime: int
    k: float
    gamma: float
    beta: float | None
    kind: MatrixKind
    h: float
    unitarity_defect: float
    inverse_defect: float | None = None
    cross_check_defect: float | None = None
    labels: tuple = ()

    @property
    def block11(self):
        return self.entries[: self.M, : self.M]

    @property
    def block12(self):
        return self.entries[: self.M, self.M :]

    @property
    def block21(self):
        return self.entries[self.M :, : self.M]

    @property
    def block22(self):
        return self.entries[self.M :, self.M :]

    def eigenvalues_22(self):
        if not self.block22.size:
            return np.zeros(0, dtype=complex)
        return np.linalg.eigvals(self.block22)

    def distance_to_one(self):
        eig = self.eigenvalues_22()
        return float(np.min(np.abs(eig - 1))) if eig.size else np.inf

    def metadata(self):
        return {
            "kind": self.kind.value,
            "k": self.k,
            "gamma": self.gamma,
            "beta": self.beta,
            "M": self.M,
            "M_prime": self.M_prime,
            "h": self.h,
            "unitarity_defect": self.unitarity_defect,
            "inverse_defect": self.inverse_defect,
            "cross_check_defect": self.cross_check_defect,
        }


def unitarity_defect(entries):
    if not entries.size:
        return 0.0
    return float(np.linalg.norm(entries @ entries.conj().T - np.eye(len(entries)), "fro"))


def _transfer(problem, kind_label):
    responses, _ = response_matrix(problem, Direction.INCOMING)
    entries = responses.T
    logger.info(f"{kind_label} at k={problem.k}: {problem.M_prime}x{problem.M_prime}")
    return ScatteringMatrix(
        entries=entries,
        M=problem.M,
        M_prime=problem.M_prime,
        k=problem.k,
        gamma=problem.gamma,
        beta=problem.beta,
        kind=MatrixKind.T_MATRIX,
        h=problem.h,
        unitarity_defect=unitarity_defect(entries),
        labels=tuple(problem.basis.labels),
    )


def classical_T(problem):
    """
    T over the propagating (and threshold) waves of every arm.
    """
    if problem.augmented:
        problem = reassemble(problem, beta=None)
    return _transfer(problem, "Classical T")


def _invert(T):
    entries = T.entries
    if not entries.size:
        return entries.copy(), 0.0
    cond = np.linalg.cond(entries)
    if not np.isfinite(cond) or cond > CONDITION_LIMIT:
        raise ResonanceError(f"T is singular at k={T.k} (condition number {cond:.3g})")
    S = np.linalg.inv(entries)
    return S, float(np.linalg.norm(S @ entries - np.eye(len(entries)), "fro"))


def _direct_S(problem):
    """
    Rows of S from solves with unit outgoing amplitudes.
    """
    responses, _ = response_matrix(problem, Direction.OUTGOING)
    return responses.T


def classical_S(T, problem=None):
    """
    S = T^-1, cross-checked against the outgoing-prescribed solves when the problem is given.
    """
    S, inverse_defect = _invert(T)
    cross = None
    if problem is not None and S.size:
        if problem.augmented != bool(T.beta):
            problem = reassemble(problem, beta=T.beta)
        cross = float(np.max(np.abs(S - _direct_S(problem))))
        logger.debug(f"S cross-check at k={T.k}: {cross:.2e}")
    defect = unitarity_defect(S)
    if defect > _defaults.UNITARITY_TOL:
        logger.warning(f"Unitarity defect {defect:.2e} at k={T.k} exceeds {_defaults.UNITARITY_TOL}")
    return replace(
        T,
        entries=S,
        kind=MatrixKind.S_MATRIX,
        unitarity_defect=defect,
        inverse_defect=inverse_defect,
        cross_check_defect=cross,
    )


def augmented_S(problem, beta):
    """
    The unitary S over the propagating waves and the evanescent pairs with rate below beta.
    """
    if not beta or not beta > 0:
        raise ValueError(f"beta must be positive, got {beta}")
    if problem.beta != beta:
        problem = reassemble(problem, beta=beta)
    T = _transfer(problem, "Augmented T")
    return classical_S(T, problem)


def transform_scattering_matrix(S, S_op):
    """
    S expressed in the propagating basis u_j^- -> sum_m S_op[j, m] u_m^- (and likewise
    for the incoming waves), which needs S_op unitary; evanescent pairs are left alone.
    """
    S_op = np.asarray(S_op, dtype=complex)
    if S_op.shape != (S.M, S.M):
        raise ValueError(f"S_op must be {S.M}x{S.M}, got {S_op.shape}")
    if S.M and np.max(np.abs(S_op @ S_op.conj().T - np.eye(S.M))) > 1e-10:
        raise ValueError("S_op must be unitary to keep the symplectic normalization of the basis")
    D = np.eye(S.M_prime, dtype=complex)
    D[: S.M, : S.M] = S_op
    entries = D @ S.entries @ D.conj().T
    return replace(S, entries=entries, unitarity_defect=unitarity_defect(entries), cross_check_defect=None)
