"""
Changes of the outgoing basis that keep the radiation condition well posed.

Given the classical S and a pair (S_op, R_op), the new "outgoing" waves are

    u_j = sum_m S_op[j, m] u_m^- + sum_p R_op[j, p] (u_p^+ + sum_i conj(S[i, p]) u_i^-)

and the functionals that pick their coefficients out of a solution are the flux
pairings with V_k = sum_m conj(inv(S_op)[m, k]) X_m. Every wave is stored as a
coefficient row over (u_1^+ .. u_M^+, u_1^- .. u_M^-). V_k is a solution of the
junction problem, and q(u_j, V_k) = i delta_jk is checked by quadrature on its field.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from ..junction.solver import JunctionField, reassemble, response_matrix
from ..modes.wave_basis import Direction, combine, flux_pairing

logger = logging.getLogger(__name__)

# Largest allowed deviation of q(u_j, V_k) from i * delta_jk
PAIRING_TOL = 1e-6


@dataclass(frozen=True, eq=False)
class RadiationBasis:
    waves: np.ndarray = field(repr=False)
    functionals: np.ndarray = field(repr=False)
    pairing: np.ndarray = field(repr=False)
    residual: float
    functional_fields: tuple = field(default=(), repr=False)

    @property
    def M(self):
        return len(self.waves)

    def coefficients(self, a, b):
        """
        Coefficients (c_j) of the u_j for a field with classical amplitudes a, b:
        c_k = -i q(field, V_k) applied to the coefficient rows.
        """
        row = np.concatenate([np.asarray(a, dtype=complex), np.asarray(b, dtype=complex)])
        gram = np.diag([-1j] * self.M + [1j] * self.M)
        return -1j * (row @ gram @ self.functionals.conj().T)


def _coefficient_rows(S, S_op, R_op):
    """
    (U, V) as coefficient rows over (u^+, u^-).
    """
    S_inv = np.linalg.inv(S_op)
    U = np.hstack([R_op, S_op + R_op @ S.conj().T])
    V = np.hstack([S_inv.conj().T @ S, S_inv.conj().T])
    return U, V


def _field_pairings(problem, U, functional_cells):
    """
    q(u_j, V_k) summed over arms by quadrature, with u_j rebuilt from the basis waves
    and V_k taken from its junction field.
    """
    basis = problem.basis
    M = problem.M
    waves = basis.incoming[:M] + basis.outgoing[:M]
    fields = [JunctionField(problem.mesh, cells, problem.k).arm_fields() for cells in functional_cells]
    out = np.zeros((len(U), len(fields)), dtype=complex)
    for arm_id, R in basis.positions.items():
        idx = [i for i, w in enumerate(waves) if w.arm_id == arm_id]
        if not idx:
            continue
        for j, row in enumerate(U):
            if not np.any(row[idx]):
                continue
            u = combine([(row[i], waves[i]) for i in idx], Direction.OUTGOING)
            for k, arm_fields in enumerate(fields):
                out[j, k] += flux_pairing(u, arm_fields[arm_id], R).value
    return out


def radiation_basis_transform(S_op, R_op, smatrix, problem):
    """
    The transformed outgoing basis u_j and its functionals V_k, with the compatibility
    pairing q(u_j, V_k) evaluated by quadrature on the junction fields of V_k.
    """
    if smatrix.beta:
        raise ValueError("The radiation basis transform needs the classical scattering matrix")
    if problem is None:
        raise ValueError("The radiation basis transform needs the junction problem S was computed from")
    M = smatrix.M
    if problem.M != M:
        raise ValueError(f"S has {M} propagating waves but the junction problem has {problem.M}")
    S = smatrix.block11
    S_op = np.asarray(S_op, dtype=complex)
    R_op = np.zeros((M, M), dtype=complex) if R_op is None else np.asarray(R_op, dtype=complex)
    for name, value in (("S_op", S_op), ("R_op", R_op)):
        if value.shape != (M, M):
            raise ValueError(f"{name} must be {M}x{M}, got {value.shape}")
    if M and np.linalg.cond(S_op) > 1 / np.finfo(float).eps:
        raise ValueError("S_op is singular")

    U, V = _coefficient_rows(S, S_op, R_op)
    if not M:
        return RadiationBasis(U, V, np.zeros((0, 0), dtype=complex), 0.0)

    if problem.augmented:
        problem = reassemble(problem, beta=None)
    _, x_cells = response_matrix(problem, Direction.OUTGOING)
    functional_cells = (x_cells @ np.linalg.inv(S_op).conj()).T
    Q = _field_pairings(problem, U, functional_cells)
    residual = float(np.max(np.abs(Q - 1j * np.eye(M))))
    logger.info(f"Radiation basis transform at k={smatrix.k}: pairing residual {residual:.2e}")
    if residual > PAIRING_TOL:
        logger.warning(f"Compatibility pairing residual {residual:.2e} exceeds {PAIRING_TOL}")
    return RadiationBasis(U, V, Q, residual, tuple(functional_cells))
