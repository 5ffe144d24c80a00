from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence, Union

import numpy as np

from .hilbert import (
    DEFAULT_GROUP_TOL,
    DimensionError,
    HermitianOperator,
    StateVector,
    as_hermitian,
    commutator,
    hermitian_part,
    spectral_decompose,
)

Label = tuple[float, ...]

PROJECTOR_TOL = 1e-10
DEFINITE_TOL = 1e-9
LABEL_DECIMALS = 9


class NotCommutingError(ValueError):
    pass


def canonical_value(value: float) -> float:
    # +0.0 folds -0.0 into 0.0
    return round(float(value), LABEL_DECIMALS) + 0.0


def canonical_label(values: Sequence[float]) -> Label:
    return tuple(canonical_value(value) for value in values)


def format_label(label: Label) -> str:
    return "(" + ", ".join(f"{value:g}" for value in label) + ")"


@dataclass(frozen=True, eq=False)
class MacrostateDecomposition:
    labels: tuple[Label, ...]
    projectors: tuple[HermitianOperator, ...]
    complete: bool = True

    def __post_init__(self) -> None:
        labels = tuple(canonical_label(label) for label in self.labels)
        object.__setattr__(self, "labels", labels)
        if len(labels) != len(self.projectors):
            raise DimensionError(f"{len(labels)} labels for {len(self.projectors)} projectors")
        if len(set(labels)) != len(labels):
            raise ValueError("macrostate labels must be distinct")
        if len({len(label) for label in labels}) > 1:
            raise ValueError("every label must carry the same number of property values")
        if not labels:
            if self.complete:
                raise ValueError("a complete decomposition needs at least one macrostate")
            return
        dims = {projector.dim for projector in self.projectors}
        if len(dims) != 1:
            raise DimensionError(f"projector dimensions differ: {sorted(dims)}")
        dim = dims.pop()
        for label, projector in zip(labels, self.projectors):
            matrix = projector.entries
            if float(np.max(np.abs(matrix @ matrix - matrix))) > PROJECTOR_TOL:
                raise ValueError(f"projector for {format_label(label)} is not idempotent")
            if np.trace(matrix).real < 0.5:
                raise ValueError(f"projector for {format_label(label)} has rank 0")
        # a sum of projectors is itself a projector iff they are pairwise orthogonal
        total = self.stacked.sum(axis=0)
        if float(np.max(np.abs(total @ total - total))) > PROJECTOR_TOL * len(labels):
            raise ValueError("macroprojectors are not pairwise orthogonal")
        if self.complete and float(np.max(np.abs(total - np.eye(dim)))) > PROJECTOR_TOL * len(labels):
            raise ValueError("macroprojectors do not sum to the identity")

    @classmethod
    def empty(cls) -> MacrostateDecomposition:
        return cls(labels=(), projectors=(), complete=False)

    @cached_property
    def stacked(self) -> np.ndarray:
        return np.stack([projector.entries for projector in self.projectors])

    @property
    def dim(self) -> int:
        return self.projectors[0].dim if self.projectors else 0

    @property
    def num_properties(self) -> int:
        return len(self.labels[0]) if self.labels else 0

    def __len__(self) -> int:
        return len(self.labels)

    def __contains__(self, label: object) -> bool:
        return label in self._index

    @cached_property
    def _index(self) -> dict[Label, int]:
        return {label: position for position, label in enumerate(self.labels)}

    def projector(self, label: Label) -> HermitianOperator:
        return self.projectors[self._index[canonical_label(label)]]

    def rank(self, label: Label) -> int:
        return int(round(np.trace(self.projector(label).entries).real))

    def entropy(self, label: Label) -> float:
        return math.log2(self.rank(label))

    def eigenvalue(self, j: int, label: Label) -> float:
        if not 0 <= j < self.num_properties:
            raise IndexError(f"property index {j} outside {self.num_properties} properties")
        return canonical_label(label)[j]

    @property
    def eigenvalue_map(self) -> dict[tuple[int, Label], float]:
        return {
            (j, label): label[j] for label in self.labels for j in range(self.num_properties)
        }

    def with_macrostate(self, label: Label, projector: HermitianOperator) -> MacrostateDecomposition:
        label = canonical_label(label)
        if label in self:
            existing = self.projector(label)
            if float(np.max(np.abs(existing.entries - projector.entries))) > DEFINITE_TOL:
                raise ValueError(f"label {format_label(label)} is already bound to another subspace")
            return self
        return MacrostateDecomposition(
            labels=self.labels + (label,),
            projectors=self.projectors + (projector,),
            complete=False,
        )

    def overlaps(self, projector: HermitianOperator, tol: float = DEFINITE_TOL) -> bool:
        if not self.labels:
            return False
        products = np.einsum("kij,jl->kil", self.stacked, projector.entries)
        return float(np.max(np.abs(products))) > tol


@dataclass(frozen=True)
class Definite:
    label: Label
    weight: float = 1.0


@dataclass(frozen=True)
class Superposed:
    weights: Mapping[Label, float] = field(default_factory=dict)


Classification = Union[Definite, Superposed]


def check_compatible(M_list: Sequence[HermitianOperator | np.ndarray], tol: float = 1e-9) -> bool:
    operators = [as_hermitian(operator) for operator in M_list]
    if len({operator.dim for operator in operators}) > 1:
        raise DimensionError("macroscopic operators must share one dimension")
    for left, right in itertools.combinations(operators, 2):
        if float(np.linalg.norm(commutator(left, right))) >= tol:
            return False
    return True


def joint_eigenspace_decomposition(
    M_list: Sequence[HermitianOperator | np.ndarray],
    group_tol: float = DEFAULT_GROUP_TOL,
    compat_tol: float = 1e-9,
    dim: int | None = None,
) -> MacrostateDecomposition:
    """Finest decomposition into common eigenspaces, labels sorted lexicographically.

    Reordering M_list permutes the coordinates of every label but yields the
    same set of projectors.
    """
    operators = [as_hermitian(operator) for operator in M_list]
    if not check_compatible(operators, compat_tol):
        raise NotCommutingError("macroscopic operators do not pairwise commute")
    if not operators:
        if dim is None:
            raise DimensionError("an empty operator list needs an explicit dimension")
        return MacrostateDecomposition(
            labels=((),), projectors=(HermitianOperator(np.eye(dim, dtype=complex)),)
        )

    size = operators[0].dim
    blocks: list[tuple[tuple[float, ...], np.ndarray]] = [((), np.eye(size, dtype=complex))]
    for operator in operators:
        refined = []
        for values, basis in blocks:
            restricted = hermitian_part(basis.conj().T @ operator.entries @ basis)
            for group in spectral_decompose(restricted, group_tol).eigenvalue_groups:
                refined.append((values + (group.eigenvalue,), basis @ group.basis))
        blocks = refined

    entries = sorted(
        ((canonical_label(values), basis) for values, basis in blocks), key=lambda item: item[0]
    )
    return MacrostateDecomposition(
        labels=tuple(label for label, _ in entries),
        projectors=tuple(
            HermitianOperator(hermitian_part(basis @ basis.conj().T)) for _, basis in entries
        ),
    )


def macro_operator(decomp: MacrostateDecomposition, j: int) -> HermitianOperator:
    if not 0 <= j < decomp.num_properties:
        raise IndexError(f"property index {j} outside {decomp.num_properties} properties")
    values = np.array([label[j] for label in decomp.labels])
    return HermitianOperator(np.tensordot(values, decomp.stacked, axes=1))


def born_weights(state: StateVector, decomp: MacrostateDecomposition) -> dict[Label, float]:
    if state.dim != decomp.dim:
        raise DimensionError(f"state dimension {state.dim} != decomposition dimension {decomp.dim}")
    amplitudes = decomp.stacked @ state.amplitudes
    weights = np.sum(np.abs(amplitudes) ** 2, axis=1)
    return {label: float(weight) for label, weight in zip(decomp.labels, weights)}


def classify(
    state: StateVector, decomp: MacrostateDecomposition, definite_tol: float = DEFINITE_TOL
) -> Classification:
    weights = born_weights(state, decomp)
    for label, weight in weights.items():
        if weight >= 1.0 - definite_tol:
            return Definite(label=label, weight=weight)
    return Superposed(weights=weights)


def has_minimal_entropy(decomp: MacrostateDecomposition, label: Label) -> bool:
    lowest = min(decomp.entropy(candidate) for candidate in decomp.labels)
    return decomp.entropy(label) <= lowest + 1e-12


def check_initial_macrostate(
    state: StateVector, decomp: MacrostateDecomposition, definite_tol: float = DEFINITE_TOL
) -> Label | None:
    """Label of the low-entropy macrostate holding the initial state.

    None when the initial state is a superposition of macrostates; raises
    ValueError when it is definite in a macrostate without minimal entropy.
    """
    classification = classify(state, decomp, definite_tol)
    if not isinstance(classification, Definite):
        return None
    if not has_minimal_entropy(decomp, classification.label):
        raise ValueError(
            f"initial macrostate {format_label(classification.label)} does not have minimal entropy"
        )
    return classification.label
