"""Dense complex linear algebra for finite-dimensional state spaces.

Conventions: hbar = 1, durations in inverse-energy units, and tensor
products order factors left to right with the leftmost factor varying
slowest (``np.kron`` order).
"""

from __future__ import annotations

import functools
from dataclasses import dataclass
from typing import Mapping, Sequence, TypeVar, Union

import numpy as np
import scipy.linalg

MAX_DIM = 4096
NORM_TOL = 1e-12
HERMITIAN_TOL = 1e-12
UNITARY_TOL = 1e-10
DEFAULT_GROUP_TOL = 1e-9


class DimensionError(ValueError):
    pass


class ZeroStateError(ValueError):
    pass


class NotHermitianError(ValueError):
    pass


class NotUnitaryError(ValueError):
    pass


class NumericalError(ArithmeticError):
    pass


def _frozen(values: object, *, ndim: int) -> np.ndarray:
    array = np.array(values, dtype=complex)
    if array.ndim != ndim:
        raise DimensionError(f"expected a {ndim}-d array, got shape {array.shape}")
    if array.size == 0:
        raise DimensionError("empty array")
    if array.shape[0] > MAX_DIM:
        raise DimensionError(f"dimension {array.shape[0]} exceeds the cap of {MAX_DIM}")
    if ndim == 2 and array.shape[0] != array.shape[1]:
        raise DimensionError(f"operator must be square, got shape {array.shape}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class StateVector:
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        amplitudes = _frozen(self.amplitudes, ndim=1)
        norm = float(np.linalg.norm(amplitudes))
        if abs(norm - 1.0) > NORM_TOL:
            raise NumericalError(f"state norm {norm!r} deviates from 1")
        object.__setattr__(self, "amplitudes", amplitudes)

    @property
    def dim(self) -> int:
        return int(self.amplitudes.shape[0])


@dataclass(frozen=True, eq=False)
class HermitianOperator:
    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = _frozen(self.entries, ndim=2)
        scale = max(1.0, float(np.max(np.abs(entries))))
        residual = float(np.max(np.abs(entries - entries.conj().T)))
        if residual > HERMITIAN_TOL * scale:
            raise NotHermitianError(f"operator is not Hermitian (residual {residual:.3e})")
        object.__setattr__(self, "entries", entries)

    @property
    def dim(self) -> int:
        return int(self.entries.shape[0])


@dataclass(frozen=True, eq=False)
class UnitaryOperator:
    entries: np.ndarray

    def __post_init__(self) -> None:
        entries = _frozen(self.entries, ndim=2)
        residual = float(
            np.max(np.abs(entries @ entries.conj().T - np.eye(entries.shape[0])))
        )
        if residual > UNITARY_TOL:
            raise NotUnitaryError(f"operator is not unitary (residual {residual:.3e})")
        object.__setattr__(self, "entries", entries)

    @property
    def dim(self) -> int:
        return int(self.entries.shape[0])


Operator = Union[HermitianOperator, UnitaryOperator]


@dataclass(frozen=True, eq=False)
class EigenvalueGroup:
    eigenvalue: float
    multiplicity: int
    projector: HermitianOperator
    basis: np.ndarray


@dataclass(frozen=True, eq=False)
class SpectralDecomposition:
    eigenvalue_groups: tuple[EigenvalueGroup, ...]

    @property
    def dim(self) -> int:
        return sum(group.multiplicity for group in self.eigenvalue_groups)

    @property
    def eigenvalues(self) -> tuple[float, ...]:
        return tuple(group.eigenvalue for group in self.eigenvalue_groups)

    @property
    def multiplicities(self) -> tuple[int, ...]:
        return tuple(group.multiplicity for group in self.eigenvalue_groups)

    def reconstruct(self) -> np.ndarray:
        return sum(
            group.eigenvalue * group.projector.entries for group in self.eigenvalue_groups
        )


def hermitian_part(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.conj().T)


def as_hermitian(value: HermitianOperator | np.ndarray | Sequence) -> HermitianOperator:
    if isinstance(value, HermitianOperator):
        return value
    return HermitianOperator(np.asarray(value, dtype=complex))


def as_unitary(value: UnitaryOperator | np.ndarray | Sequence) -> UnitaryOperator:
    if isinstance(value, UnitaryOperator):
        return value
    return UnitaryOperator(np.asarray(value, dtype=complex))


def make_state(amplitudes: Sequence[complex] | np.ndarray) -> StateVector:
    vector = np.array(amplitudes, dtype=complex).reshape(-1)
    if vector.size == 0:
        raise DimensionError("a state needs at least one amplitude")
    norm = float(np.linalg.norm(vector))
    if norm == 0.0:
        raise ZeroStateError("cannot normalize the zero vector")
    return StateVector(vector / norm)


def identity(dim: int) -> UnitaryOperator:
    return UnitaryOperator(np.eye(dim, dtype=complex))


def _require_same_dim(*dims: int) -> None:
    if len(set(dims)) > 1:
        raise DimensionError(f"dimension mismatch: {dims}")


def apply(operator: Operator | np.ndarray, state: StateVector) -> StateVector:
    matrix = operator if isinstance(operator, np.ndarray) else operator.entries
    _require_same_dim(matrix.shape[0], state.dim)
    return StateVector(matrix @ state.amplitudes)


def spectral_decompose(
    H: HermitianOperator | np.ndarray, group_tol: float = DEFAULT_GROUP_TOL
) -> SpectralDecomposition:
    operator = as_hermitian(H)
    values, vectors = scipy.linalg.eigh(operator.entries)

    clusters: list[list[int]] = []
    for index, value in enumerate(values):
        if clusters:
            previous = values[clusters[-1][-1]]
            if value - previous <= group_tol * max(1.0, abs(value)):
                clusters[-1].append(index)
                continue
        clusters.append([index])

    groups = []
    for cluster in clusters:
        basis = vectors[:, cluster]
        basis.setflags(write=False)
        projector = HermitianOperator(hermitian_part(basis @ basis.conj().T))
        groups.append(
            EigenvalueGroup(
                eigenvalue=float(np.mean(values[cluster])),
                multiplicity=len(cluster),
                projector=projector,
                basis=basis,
            )
        )
    return SpectralDecomposition(tuple(groups))


def propagator(H: HermitianOperator | np.ndarray, duration: float) -> UnitaryOperator:
    operator = as_hermitian(H)
    values, vectors = scipy.linalg.eigh(operator.entries)
    phases = np.exp(-1j * values * duration)
    return UnitaryOperator((vectors * phases) @ vectors.conj().T)


def evolve(state: StateVector, H: HermitianOperator | np.ndarray, duration: float) -> StateVector:
    operator = as_hermitian(H)
    _require_same_dim(state.dim, operator.dim)
    return apply(propagator(operator, duration), state)


def conjugate(A: HermitianOperator | np.ndarray, S: UnitaryOperator | np.ndarray) -> HermitianOperator:
    operator = as_hermitian(A)
    unitary = as_unitary(S)
    _require_same_dim(operator.dim, unitary.dim)
    matrix = unitary.entries @ operator.entries @ unitary.entries.conj().T
    return HermitianOperator(hermitian_part(matrix))


def commutator(A: Operator | np.ndarray, B: Operator | np.ndarray) -> np.ndarray:
    left = A if isinstance(A, np.ndarray) else A.entries
    right = B if isinstance(B, np.ndarray) else B.entries
    _require_same_dim(left.shape[0], right.shape[0])
    return left @ right - right @ left


_Factor = TypeVar("_Factor", StateVector, HermitianOperator, UnitaryOperator)


def tensor(factors: Sequence[_Factor]) -> _Factor:
    if not factors:
        raise DimensionError("tensor product of an empty sequence")
    kinds = {type(factor) for factor in factors}
    if len(kinds) != 1:
        raise TypeError(f"cannot mix {sorted(kind.__name__ for kind in kinds)} in a tensor product")
    kind = kinds.pop()
    if kind is StateVector:
        arrays = [factor.amplitudes for factor in factors]
    else:
        arrays = [factor.entries for factor in factors]
    return kind(functools.reduce(np.kron, arrays))


def embed(local: Mapping[int, np.ndarray], factor_dims: Sequence[int]) -> np.ndarray:
    """Kronecker product of per-factor matrices, identity where a factor is absent."""
    for index, matrix in local.items():
        if not 0 <= index < len(factor_dims):
            raise DimensionError(f"factor {index} outside {len(factor_dims)} factors")
        if matrix.shape != (factor_dims[index], factor_dims[index]):
            raise DimensionError(
                f"factor {index} has dimension {factor_dims[index]}, got {matrix.shape}"
            )
    pieces = [
        np.asarray(local[index], dtype=complex) if index in local else np.eye(dim, dtype=complex)
        for index, dim in enumerate(factor_dims)
    ]
    return functools.reduce(np.kron, pieces)


def expectation(state: StateVector, A: HermitianOperator | np.ndarray) -> float:
    operator = as_hermitian(A)
    _require_same_dim(state.dim, operator.dim)
    value = np.vdot(state.amplitudes, operator.entries @ state.amplitudes)
    if abs(value.imag) > 1e-8:
        raise NumericalError(f"expectation has imaginary part {value.imag:.3e}")
    return float(value.real)


def schmidt_rank(
    state: StateVector, factor_dims: Sequence[int], cut: int, tol: float = 1e-8
) -> int:
    _require_same_dim(state.dim, int(np.prod(factor_dims)))
    if not 0 < cut < len(factor_dims):
        raise DimensionError(f"cut {cut} must split {len(factor_dims)} factors")
    left = int(np.prod(factor_dims[:cut]))
    singular_values = scipy.linalg.svdvals(state.amplitudes.reshape(left, -1))
    return int(np.sum(singular_values > tol))


PAULI_X = HermitianOperator(np.array([[0, 1], [1, 0]], dtype=complex))
PAULI_Y = HermitianOperator(np.array([[0, -1j], [1j, 0]], dtype=complex))
PAULI_Z = HermitianOperator(np.array([[1, 0], [0, -1]], dtype=complex))
HADAMARD = UnitaryOperator(np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2.0))


def spin_axis(angle_deg: float) -> HermitianOperator:
    theta = np.deg2rad(angle_deg)
    return HermitianOperator(np.cos(theta) * PAULI_Z.entries + np.sin(theta) * PAULI_X.entries)


def spin_eigenbasis(angle_deg: float) -> np.ndarray:
    # columns: +1 eigenvector, then -1 eigenvector
    half = np.deg2rad(angle_deg) / 2.0
    return np.array(
        [[np.cos(half), -np.sin(half)], [np.sin(half), np.cos(half)]], dtype=complex
    )


def check_unitary(matrix: np.ndarray, tol: float = UNITARY_TOL) -> UnitaryOperator:
    entries = np.asarray(matrix, dtype=complex)
    residual = float(np.max(np.abs(entries @ entries.conj().T - np.eye(entries.shape[0]))))
    if residual > tol:
        raise NotUnitaryError(f"operator is not unitary (residual {residual:.3e})")
    if residual > UNITARY_TOL:
        # re-orthonormalize so the validated type can hold it
        left, _, right = scipy.linalg.svd(entries)
        entries = left @ right
    return UnitaryOperator(entries)
