"""Single-world unitary dynamics with assignment of macrostates at observation events.

Between events a World evolves by its propagator alone. At an event the
evolved state is classified against the event's candidate macrostates; a
superposed state gets one label drawn by the Born rule and an assignment
unitary that rotates the state exactly into that macrostate. Nothing is
ever projected, and every event is appended to an immutable ledger.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterator, Literal, Mapping, Sequence

import numpy as np
import scipy.linalg

from .hilbert import (
    DimensionError,
    HermitianOperator,
    NumericalError,
    StateVector,
    UnitaryOperator,
    apply,
    conjugate,
    identity,
    make_state,
    propagator,
    spectral_decompose,
)
from .macrostate import (
    DEFINITE_TOL,
    Definite,
    Label,
    MacrostateDecomposition,
    born_weights,
    canonical_label,
    classify,
    format_label,
)

logger = logging.getLogger(__name__)

AssignmentMode = Literal["free", "strict"]
ASSIGNMENT_MODES: tuple[str, ...] = ("free", "strict")

ZERO_WEIGHT = 1e-15
WEIGHT_SUM_TOL = 1e-10
PROTECTION_TOL = 1e-9
STRICT_TOL = 1e-9
FIDELITY_TOL = 1e-10
REPLAY_TOL = 1e-9


class PhysicationError(RuntimeError):
    pass


class SpectrumError(ValueError):
    pass


class DecompositionError(PhysicationError):
    pass


@dataclass
class ProtectedSectorViolation(PhysicationError):
    overlap: float
    which: str

    def __str__(self) -> str:
        return f"{self.which} overlaps an assigned macrostate by {self.overlap:.3e}"


@dataclass
class StrictModeUnsatisfiable(PhysicationError):
    residual: float
    reason: str

    def __str__(self) -> str:
        return f"no Hamiltonian-preserving assignment: {self.reason} (residual {self.residual:.3e})"


@dataclass
class UnphysicatedSectorExhausted(PhysicationError):
    time: float
    event_name: str
    event_index: int
    overlap: float

    def __str__(self) -> str:
        return (
            f"event {self.event_index} ({self.event_name!r} at t={self.time:g}) has no "
            f"unassigned sector left: state overlaps assigned macrostates by {self.overlap:.3e}"
        )


@dataclass(frozen=True, eq=False)
class LedgerEvent:
    time: float
    name: str
    candidates: MacrostateDecomposition
    born_weights: Mapping[Label, float]
    chosen: Label
    assignment_unitary: UnitaryOperator
    pre_state: StateVector
    post_state: StateVector

    @property
    def trivial(self) -> bool:
        return len(self.born_weights) == 1

    @property
    def fidelity(self) -> float:
        image = self.assignment_unitary.entries @ self.pre_state.amplitudes
        return float(abs(np.vdot(self.post_state.amplitudes, image)))


@dataclass(frozen=True)
class AssignmentLedger:
    events: tuple[LedgerEvent, ...] = ()

    def __len__(self) -> int:
        return len(self.events)

    def __iter__(self) -> Iterator[LedgerEvent]:
        return iter(self.events)

    def __getitem__(self, index: int) -> LedgerEvent:
        return self.events[index]

    def appended(self, event: LedgerEvent) -> AssignmentLedger:
        if self.events and event.time <= self.events[-1].time:
            raise ValueError(
                f"ledger times must increase: {event.time!r} after {self.events[-1].time!r}"
            )
        if abs(sum(event.born_weights.values()) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError("recorded Born weights do not sum to 1")
        if event.chosen not in event.candidates or event.chosen not in event.born_weights:
            raise ValueError(f"chosen label {format_label(event.chosen)} is not a candidate")
        return AssignmentLedger(self.events + (event,))


@dataclass(frozen=True)
class PhysicationOutcome:
    label: Label
    weight: float
    event_index: int


@dataclass(frozen=True, eq=False)
class World:
    state: StateVector
    time: float
    hamiltonian: HermitianOperator
    assigned: MacrostateDecomposition
    ledger: AssignmentLedger = AssignmentLedger()
    mode: AssignmentMode = "free"
    unassigned: Mapping[str, HermitianOperator] = field(default_factory=dict)
    history: UnitaryOperator | None = None

    def __post_init__(self) -> None:
        if self.mode not in ASSIGNMENT_MODES:
            raise ValueError(f"unknown assignment mode {self.mode!r}")
        if self.state.dim != self.hamiltonian.dim:
            raise DimensionError("state and Hamiltonian dimensions differ")
        if self.history is None:
            object.__setattr__(self, "history", identity(self.state.dim))


@dataclass(frozen=True, eq=False)
class ScheduledEvent:
    time: float
    candidates: MacrostateDecomposition
    name: str = "event"
    propagator: UnitaryOperator | None = None
    record_indices: tuple[int, ...] = ()
    outcome_names: Mapping[Label, str] = field(default_factory=dict)

    def outcome(self, label: Label) -> str:
        if self.record_indices:
            key = tuple(label[index] for index in self.record_indices)
        else:
            key = label
        return self.outcome_names.get(canonical_label(key), format_label(key))


@dataclass(frozen=True, eq=False)
class PendingStep:
    world: World
    event: ScheduledEvent
    evolution: UnitaryOperator
    evolved: StateVector
    definite: bool
    support: Mapping[Label, float]
    weights: Mapping[Label, float]


def initial_world(
    state: StateVector,
    hamiltonian: HermitianOperator,
    decomposition: MacrostateDecomposition,
    *,
    mode: AssignmentMode = "free",
    unassigned: Mapping[str, HermitianOperator] | None = None,
    time: float = 0.0,
    initial_label: Label | None = None,
) -> World:
    assigned = MacrostateDecomposition.empty()
    if initial_label is not None:
        assigned = assigned.with_macrostate(initial_label, decomposition.projector(initial_label))
    return World(
        state=state,
        time=time,
        hamiltonian=hamiltonian,
        assigned=assigned,
        mode=mode,
        unassigned=dict(unassigned or {}),
    )


def trial_rng(master_seed: int, trial: int) -> np.random.Generator:
    """Counter-based stream for one trial.

    Philox keyed by the master seed; the trial index occupies the second
    counter word, leaving 2**64 blocks of draws per trial.
    """
    if trial < 0 or trial >= 2**64:
        raise ValueError(f"trial index {trial} outside [0, 2**64)")
    return np.random.Generator(
        np.random.Philox(key=master_seed % 2**64, counter=[0, trial, 0, 0])
    )


def fresh_observable(state: StateVector, spectrum: Sequence[float]) -> HermitianOperator:
    values = [float(value) for value in spectrum]
    if not values:
        raise SpectrumError("spectrum must not be empty")
    if len(set(values)) != len(values):
        raise SpectrumError(f"spectrum values must be distinct, got {values}")
    if state.dim < len(values):
        raise DimensionError(f"cannot fit {len(values)} eigenvalues into dimension {state.dim}")
    if len(values) == 1:
        return HermitianOperator(values[0] * np.eye(state.dim, dtype=complex))
    v = state.amplitudes
    matrix = values[0] * np.outer(v, v.conj())
    # remaining eigenvalues share the orthogonal complement in near-equal blocks
    complement = scipy.linalg.null_space(v.conj()[np.newaxis, :])
    groups = np.array_split(np.arange(complement.shape[1]), len(values) - 1)
    for value, columns in zip(values[1:], groups):
        basis = complement[:, columns]
        matrix = matrix + value * (basis @ basis.conj().T)
    return HermitianOperator(0.5 * (matrix + matrix.conj().T))


def _plane_rotation(psi: np.ndarray, phi: np.ndarray) -> np.ndarray:
    dim = psi.shape[0]
    alpha = complex(np.vdot(psi, phi))
    residual = phi - alpha * psi
    beta = float(np.linalg.norm(residual))
    if beta < 1e-14:
        return np.eye(dim, dtype=complex) + (alpha / abs(alpha) - 1.0) * np.outer(psi, psi.conj())
    frame = np.column_stack([psi, residual / beta])
    rotation = np.array([[alpha, -beta], [beta, np.conj(alpha)]], dtype=complex)
    return np.eye(dim, dtype=complex) + frame @ (rotation - np.eye(2)) @ frame.conj().T


def _strict_rotation(psi: np.ndarray, phi: np.ndarray, hamiltonian: HermitianOperator) -> np.ndarray:
    dim = psi.shape[0]
    matrix = np.zeros((dim, dim), dtype=complex)
    for group in spectral_decompose(hamiltonian).eigenvalue_groups:
        basis = group.basis
        source, target = basis.conj().T @ psi, basis.conj().T @ phi
        source_norm, target_norm = np.linalg.norm(source), np.linalg.norm(target)
        if abs(source_norm - target_norm) > STRICT_TOL:
            raise StrictModeUnsatisfiable(
                residual=float(abs(source_norm - target_norm)),
                reason=f"weight in the energy-{group.eigenvalue:g} eigenspace would change",
            )
        if source_norm < 1e-12:
            block = np.eye(group.multiplicity, dtype=complex)
        else:
            block = _plane_rotation(source / source_norm, target / target_norm)
        matrix += basis @ block @ basis.conj().T
    return matrix


def construct_assignment_unitary(
    psi: StateVector,
    phi: StateVector,
    protected: Sequence[HermitianOperator] = (),
    *,
    mode: AssignmentMode = "free",
    hamiltonian: HermitianOperator | None = None,
) -> UnitaryOperator:
    if psi.dim != phi.dim:
        raise DimensionError("psi and phi dimensions differ")
    for projector in protected:
        for which, vector in (("psi", psi), ("phi", phi)):
            overlap = float(np.linalg.norm(projector.entries @ vector.amplitudes))
            if overlap > PROTECTION_TOL:
                raise ProtectedSectorViolation(overlap=overlap, which=which)

    if mode == "strict":
        if hamiltonian is None:
            raise ValueError("strict mode needs the Hamiltonian")
        matrix = _strict_rotation(psi.amplitudes, phi.amplitudes, hamiltonian)
        residual = float(np.max(np.abs(matrix @ hamiltonian.entries - hamiltonian.entries @ matrix)))
        if residual >= STRICT_TOL:
            raise StrictModeUnsatisfiable(residual=residual, reason="rotation does not commute with H")
        for projector in protected:
            moved = float(np.max(np.abs((matrix - np.eye(psi.dim)) @ projector.entries)))
            if moved > PROTECTION_TOL:
                raise StrictModeUnsatisfiable(residual=moved, reason="rotation moves an assigned macrostate")
    else:
        matrix = _plane_rotation(psi.amplitudes, phi.amplitudes)

    unitary = UnitaryOperator(matrix)
    fidelity = abs(np.vdot(phi.amplitudes, matrix @ psi.amplitudes))
    if fidelity < 1.0 - FIDELITY_TOL:
        raise NumericalError(f"assignment unitary reaches fidelity {fidelity:.12f} only")
    return unitary


def prepare_step(
    world: World, event: ScheduledEvent, definite_tol: float = DEFINITE_TOL
) -> PendingStep:
    if event.time <= world.time:
        raise ValueError(f"event at t={event.time!r} does not follow t={world.time!r}")
    if event.candidates.dim != world.state.dim:
        raise DimensionError("candidate macrostates do not match the state dimension")
    evolution = event.propagator or propagator(world.hamiltonian, event.time - world.time)
    evolved = apply(evolution, world.state)

    weights = born_weights(evolved, event.candidates)
    total = sum(weights.values())
    if abs(total - 1.0) > WEIGHT_SUM_TOL:
        raise DecompositionError(
            f"candidate macrostates of {event.name!r} cover weight {total!r}, not 1"
        )

    classification = classify(evolved, event.candidates, definite_tol)
    if isinstance(classification, Definite):
        return PendingStep(
            world=world,
            event=event,
            evolution=evolution,
            evolved=evolved,
            definite=True,
            support={classification.label: 1.0},
            weights=weights,
        )

    support = {label: weight for label, weight in weights.items() if weight >= ZERO_WEIGHT}
    dropped = len(weights) - len(support)
    if dropped:
        logger.debug("event %r: %d zero-weight labels left out of the support", event.name, dropped)
    norm = sum(support.values())
    return PendingStep(
        world=world,
        event=event,
        evolution=evolution,
        evolved=evolved,
        definite=False,
        support={label: weight / norm for label, weight in support.items()},
        weights=weights,
    )


def sample_label(weights: Mapping[Label, float], rng: np.random.Generator) -> Label:
    labels = sorted(weights)
    cumulative = np.cumsum([weights[label] for label in labels])
    draw = rng.random() * cumulative[-1]
    index = int(np.searchsorted(cumulative, draw, side="right"))
    return labels[min(index, len(labels) - 1)]


def complete_step(pending: PendingStep, chosen: Label) -> tuple[World, PhysicationOutcome]:
    world, event = pending.world, pending.event
    chosen = canonical_label(chosen)
    if chosen not in pending.support:
        raise DecompositionError(f"label {format_label(chosen)} is outside the Born support")
    projector = event.candidates.projector(chosen)
    event_index = len(world.ledger)

    if pending.definite:
        assignment = identity(world.state.dim)
        post_state = pending.evolved
    else:
        target = make_state(projector.entries @ pending.evolved.amplitudes)
        try:
            assignment = construct_assignment_unitary(
                pending.evolved,
                target,
                world.assigned.projectors,
                mode=world.mode,
                hamiltonian=world.hamiltonian,
            )
        except ProtectedSectorViolation as exc:
            raise UnphysicatedSectorExhausted(
                time=event.time,
                event_name=event.name,
                event_index=event_index,
                overlap=exc.overlap,
            ) from exc
        post_state = apply(assignment, pending.evolved)

    assigned = world.assigned
    if not assigned.overlaps(projector):
        assigned = assigned.with_macrostate(chosen, projector)

    unassigned = dict(world.unassigned)
    if not pending.definite:
        unassigned = {name: conjugate(operator, assignment) for name, operator in unassigned.items()}

    ledger_event = LedgerEvent(
        time=event.time,
        name=event.name,
        candidates=event.candidates,
        born_weights=dict(pending.support),
        chosen=chosen,
        assignment_unitary=assignment,
        pre_state=pending.evolved,
        post_state=post_state,
    )
    history = UnitaryOperator(assignment.entries @ pending.evolution.entries @ world.history.entries)
    successor = World(
        state=post_state,
        time=event.time,
        hamiltonian=world.hamiltonian,
        assigned=assigned,
        ledger=world.ledger.appended(ledger_event),
        mode=world.mode,
        unassigned=unassigned,
        history=history,
    )
    return successor, PhysicationOutcome(
        label=chosen, weight=pending.support[chosen], event_index=event_index
    )


def step(
    world: World,
    next_event: ScheduledEvent,
    rng_stream: np.random.Generator | None = None,
    *,
    force_label: Label | None = None,
) -> tuple[World, PhysicationOutcome]:
    pending = prepare_step(world, next_event)
    if force_label is not None:
        chosen = canonical_label(force_label)
    elif rng_stream is not None:
        chosen = sample_label(pending.support, rng_stream)
    else:
        raise ValueError("step needs an rng stream or a forced label")
    return complete_step(pending, chosen)


@dataclass(frozen=True)
class LedgerVerdict:
    ok: bool
    event_index: int | None = None
    reason: str = ""

    def __bool__(self) -> bool:
        return self.ok


def _fail(index: int, reason: str) -> LedgerVerdict:
    logger.warning("ledger verification failed at event %d: %s", index, reason)
    return LedgerVerdict(ok=False, event_index=index, reason=reason)


def verify_ledger(world: World, tol: float = REPLAY_TOL) -> LedgerVerdict:
    events = world.ledger.events
    previous_time = None
    for index, event in enumerate(events):
        if previous_time is not None and event.time <= previous_time:
            return _fail(index, "event times do not increase")
        previous_time = event.time

        if abs(sum(event.born_weights.values()) - 1.0) > WEIGHT_SUM_TOL:
            return _fail(index, "recorded weights do not sum to 1")
        if event.chosen not in event.born_weights:
            return _fail(index, "chosen label missing from the recorded weights")

        classification = classify(event.pre_state, event.candidates)
        if event.trivial:
            if not (isinstance(classification, Definite) and classification.label == event.chosen):
                return _fail(index, "pre-state no longer classifies as the recorded definite macrostate")
        else:
            if isinstance(classification, Definite):
                return _fail(index, "pre-state classifies as definite but a draw was recorded")
            support = {
                label: weight
                for label, weight in classification.weights.items()
                if weight >= ZERO_WEIGHT
            }
            if set(support) != set(event.born_weights):
                return _fail(index, "recorded candidate support differs from the replay")
            norm = sum(support.values())
            deviation = max(abs(support[label] / norm - event.born_weights[label]) for label in support)
            if deviation > tol:
                return _fail(index, f"recorded Born weights deviate by {deviation:.3e}")

        matrix = event.assignment_unitary.entries
        mapped = float(np.linalg.norm(matrix @ event.pre_state.amplitudes - event.post_state.amplitudes))
        if mapped > tol:
            return _fail(index, f"assignment unitary misses the post-state by {mapped:.3e}")

        weight = born_weights(event.post_state, event.candidates)[event.chosen]
        if weight < 1.0 - tol:
            return _fail(index, "post-state is not in the chosen macrostate")

        for earlier_index, earlier in enumerate(events[:index]):
            earlier_projector = earlier.candidates.projector(earlier.chosen).entries
            residual = float(np.max(np.abs(matrix @ earlier_projector - earlier_projector @ matrix)))
            if residual > tol:
                return _fail(
                    index,
                    f"assignment unitary moves the macrostate recorded at event {earlier_index}"
                    f" (residual {residual:.3e})",
                )
    return LedgerVerdict(ok=True)
