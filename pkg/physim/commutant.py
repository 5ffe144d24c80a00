"""Unitaries commuting with a Hamiltonian and the operator families they generate."""

from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .hilbert import (
    DEFAULT_GROUP_TOL,
    DimensionError,
    HermitianOperator,
    NumericalError,
    UnitaryOperator,
    as_hermitian,
    as_unitary,
    commutator,
    conjugate,
    spectral_decompose,
)

logger = logging.getLogger(__name__)

HamiltonianFunctional = Callable[[Sequence[HermitianOperator]], np.ndarray]


@dataclass
class RelationViolation(AssertionError):
    clause: str
    residual: float
    detail: str = ""

    def __str__(self) -> str:
        message = f"relation clause ({self.clause}) violated: residual {self.residual:.3e}"
        if self.detail:
            message = f"{message} ({self.detail})"
        return message


@dataclass(frozen=True)
class RelationReport:
    residuals: dict[str, float] = field(default_factory=dict)
    tol: float = 1e-9

    @property
    def passed(self) -> bool:
        return all(value <= self.tol for value in self.residuals.values())


def commutant_dimension(H: HermitianOperator | np.ndarray, group_tol: float = DEFAULT_GROUP_TOL) -> int:
    decomposition = spectral_decompose(H, group_tol)
    return sum(multiplicity * multiplicity for multiplicity in decomposition.multiplicities)


def _hermitian_basis(dim: int) -> list[np.ndarray]:
    basis = []
    for j in range(dim):
        element = np.zeros((dim, dim), dtype=complex)
        element[j, j] = 1.0
        basis.append(element)
    for j, k in itertools.combinations(range(dim), 2):
        symmetric = np.zeros((dim, dim), dtype=complex)
        symmetric[j, k] = symmetric[k, j] = 1.0
        antisymmetric = np.zeros((dim, dim), dtype=complex)
        antisymmetric[j, k] = 1j
        antisymmetric[k, j] = -1j
        basis.extend((symmetric, antisymmetric))
    return basis


def commutant_dimension_oracle(H: HermitianOperator | np.ndarray, rtol: float = 1e-8) -> int:
    """Real dimension of {X Hermitian : XH = HX} by brute-force linear algebra.

    This equals the real dimension of the unitary commutant, since the
    unitaries commuting with H are exactly exp(iX) for such X.
    """
    operator = as_hermitian(H)
    basis = _hermitian_basis(operator.dim)
    columns = []
    for element in basis:
        residual = commutator(element, operator.entries).reshape(-1)
        columns.append(np.concatenate([residual.real, residual.imag]))
    system = np.column_stack(columns)
    singular_values = scipy.linalg.svdvals(system)
    scale = max(1.0, float(np.max(np.abs(operator.entries))))
    rank = int(np.sum(singular_values > rtol * scale))
    return len(basis) - rank


def haar_unitary(dim: int, rng: np.random.Generator) -> UnitaryOperator:
    if dim < 1:
        raise DimensionError(f"unitary dimension must be positive, got {dim}")
    gaussian = (rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))) / np.sqrt(2.0)
    q, r = scipy.linalg.qr(gaussian)
    diagonal = np.diag(r)
    phases = diagonal / np.abs(diagonal)
    return UnitaryOperator(q * phases)


def sample_commuting_unitary(
    H: HermitianOperator | np.ndarray, seed: int, group_tol: float = DEFAULT_GROUP_TOL
) -> UnitaryOperator:
    operator = as_hermitian(H)
    rng = np.random.default_rng(seed)
    decomposition = spectral_decompose(operator, group_tol)
    matrix = np.zeros((operator.dim, operator.dim), dtype=complex)
    for group in decomposition.eigenvalue_groups:
        block = haar_unitary(group.multiplicity, rng).entries
        matrix += group.basis @ block @ group.basis.conj().T
    residual = float(np.linalg.norm(commutator(matrix, operator.entries)))
    if residual >= 1e-9 * max(1.0, float(np.linalg.norm(operator.entries))):
        raise NumericalError(f"sampled unitary fails to commute (residual {residual:.3e})")
    return UnitaryOperator(matrix)


def equivalent_assignment(
    ops: Sequence[HermitianOperator | np.ndarray], S: UnitaryOperator | np.ndarray
) -> tuple[HermitianOperator, ...]:
    unitary = as_unitary(S)
    return tuple(conjugate(operator, unitary) for operator in ops)


def sum_of_squares(ops: Sequence[HermitianOperator]) -> np.ndarray:
    return sum(operator.entries @ operator.entries for operator in ops)


def _scaled(residual: float, *matrices: np.ndarray) -> float:
    scale = max([1.0] + [float(np.max(np.abs(matrix))) for matrix in matrices])
    return residual / scale


def verify_relation_preservation(
    ops: Sequence[HermitianOperator | np.ndarray],
    primed: Sequence[HermitianOperator | np.ndarray],
    S: UnitaryOperator | np.ndarray,
    tol: float = 1e-9,
    hamiltonian_functional: HamiltonianFunctional | None = None,
) -> RelationReport:
    if len(ops) != len(primed):
        raise DimensionError(f"{len(ops)} operators but {len(primed)} primed operators")
    originals = [as_hermitian(operator) for operator in ops]
    images = [as_hermitian(operator) for operator in primed]
    unitary = as_unitary(S)
    dims = {operator.dim for operator in originals + images} | {unitary.dim}
    if len(dims) > 1:
        raise DimensionError(f"dimension mismatch: {sorted(dims)}")
    functional = hamiltonian_functional or sum_of_squares
    s, s_dag = unitary.entries, unitary.entries.conj().T

    residuals = {"i": 0.0, "ii": 0.0, "iii": 0.0, "iv": 0.0}

    def record(clause: str, value: float, detail: str) -> None:
        residuals[clause] = max(residuals[clause], value)
        if value > tol:
            raise RelationViolation(clause=clause, residual=value, detail=detail)

    for index, (original, image) in enumerate(zip(originals, images)):
        expected = s @ original.entries @ s_dag
        value = float(np.max(np.abs(image.entries - expected)))
        record("i", _scaled(value, original.entries), f"operator {index}")

    for index, (original, image) in enumerate(zip(originals, images)):
        before = scipy.linalg.eigvalsh(original.entries)
        after = scipy.linalg.eigvalsh(image.entries)
        value = float(np.max(np.abs(before - after)))
        record("ii", _scaled(value, original.entries), f"operator {index}")

    for j, k in itertools.combinations(range(len(originals)), 2):
        expected = s @ commutator(originals[j], originals[k]) @ s_dag
        value = float(np.max(np.abs(commutator(images[j], images[k]) - expected)))
        record("iii", _scaled(value, originals[j].entries, originals[k].entries), f"pair ({j}, {k})")

    if originals:
        before = np.asarray(functional(originals))
        after = np.asarray(functional(images))
        value = float(np.max(np.abs(after - s @ before @ s_dag)))
        record("iv", _scaled(value, before), "hamiltonian functional")

    logger.debug("relation preservation residuals: %s", residuals)
    return RelationReport(residuals=residuals, tol=tol)
