from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping, Sequence, Union

import numpy as np

from .hilbert import (
    MAX_DIM,
    DimensionError,
    HermitianOperator,
    NotHermitianError,
    NumericalError,
    StateVector,
    UnitaryOperator,
    ZeroStateError,
    check_unitary,
    embed,
    hermitian_part,
    identity,
    make_state,
    propagator,
    spin_axis,
    spin_eigenbasis,
)
from .macrostate import (
    Label,
    MacrostateDecomposition,
    NotCommutingError,
    canonical_label,
    check_initial_macrostate,
    joint_eigenspace_decomposition,
)
from .physication import ASSIGNMENT_MODES, ScheduledEvent, World, initial_world

logger = logging.getLogger(__name__)

SCENARIO_KINDS: tuple[str, ...] = (
    "fresh_spin",
    "prepare_measure",
    "epr_chsh",
    "sequential_chain",
    "conservation",
    "generic",
)
CONSERVED_NAME = "conserved"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RegisterObservable:
    factor: int


@dataclass(frozen=True)
class SpinObservable:
    factor: int
    angle_deg: float = 0.0
    analyzer: bool = False


@dataclass(frozen=True, eq=False)
class MatrixObservable:
    matrix: HermitianOperator


Observable = Union[RegisterObservable, SpinObservable, MatrixObservable]


@dataclass(frozen=True, eq=False)
class MatrixCoupling:
    window: tuple[float, float]
    interaction: HermitianOperator


@dataclass(frozen=True)
class PointerCopy:
    window: tuple[float, float]
    system_factor: int
    pointer_factor: int
    angles_deg: tuple[float, ...]
    setting_factor: int | None = None
    analyzer: bool = False


Coupling = Union[MatrixCoupling, PointerCopy]


@dataclass(frozen=True)
class EventSpec:
    time: float
    name: str
    observables: tuple[Observable, ...] | None = None
    record_indices: tuple[int, ...] = ()
    outcome_names: tuple[tuple[Label, str], ...] = ()


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    name: str
    kind: str
    factor_dims: tuple[int, ...]
    initial_state: StateVector
    hamiltonian: HermitianOperator | None = None
    couplings: tuple[Coupling, ...] = ()
    macro_operators: tuple[Observable, ...] = ()
    events: tuple[EventSpec, ...] = ()
    conserved: Observable | None = None
    mode: str = "free"
    trials: int = 1000
    master_seed: int = 0
    params: Mapping[str, Any] = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return math.prod(self.factor_dims)

    def replace(self, **changes: Any) -> ScenarioConfig:
        return dataclasses.replace(self, **changes)


@dataclass(frozen=True, eq=False)
class Schedule:
    config: ScenarioConfig
    hamiltonian: HermitianOperator
    macro: MacrostateDecomposition
    events: tuple[ScheduledEvent, ...]
    conserved: HermitianOperator | None
    initial_label: Label | None

    def initial_world(self) -> World:
        unassigned = {CONSERVED_NAME: self.conserved} if self.conserved is not None else {}
        return initial_world(
            self.config.initial_state,
            self.hamiltonian,
            self.macro,
            mode=self.config.mode,
            unassigned=unassigned,
            initial_label=self.initial_label,
        )

    def outcome_key(self, path: Sequence[Label]) -> tuple[str, ...]:
        return tuple(event.outcome(label) for event, label in zip(self.events, path))


def _check_factor(index: int, factor_dims: Sequence[int], what: str) -> None:
    if not isinstance(index, int) or not 0 <= index < len(factor_dims):
        raise ConfigError(f"{what}: factor {index!r} outside {len(factor_dims)} factors")


def observable_matrix(spec: Observable, factor_dims: Sequence[int]) -> HermitianOperator:
    if isinstance(spec, RegisterObservable):
        _check_factor(spec.factor, factor_dims, "register observable")
        values = np.diag(np.arange(factor_dims[spec.factor], dtype=complex))
        return HermitianOperator(embed({spec.factor: values}, factor_dims))
    if isinstance(spec, SpinObservable):
        _check_factor(spec.factor, factor_dims, "spin observable")
        if factor_dims[spec.factor] != 2:
            raise ConfigError(f"spin observable on factor {spec.factor} of dimension {factor_dims[spec.factor]}")
        angle = spec.angle_deg * (2.0 if spec.analyzer else 1.0)
        return HermitianOperator(embed({spec.factor: spin_axis(angle).entries}, factor_dims))
    if spec.matrix.dim != math.prod(factor_dims):
        raise ConfigError(f"matrix observable has dimension {spec.matrix.dim}")
    return spec.matrix


def shift_generator(levels: int, steps: int, duration: float) -> np.ndarray:
    """Hermitian G with exp(-i G duration) equal to the cyclic shift |k> -> |k+steps mod levels>."""
    indices = np.arange(levels)
    fourier = np.exp(2j * np.pi * np.outer(indices, indices) / levels) / np.sqrt(levels)
    # the shift's eigenvalue on Fourier column j is exp(-2 pi i j steps / levels)
    phases = np.angle(np.exp(-2j * np.pi * indices * steps / levels))
    generator = (fourier * (-phases / duration)) @ fourier.conj().T
    return hermitian_part(generator)


def pointer_copy_generator(spec: PointerCopy, factor_dims: Sequence[int]) -> HermitianOperator:
    _check_factor(spec.system_factor, factor_dims, "pointer_copy system")
    _check_factor(spec.pointer_factor, factor_dims, "pointer_copy pointer")
    if spec.system_factor == spec.pointer_factor:
        raise ConfigError("pointer_copy: system and pointer must be different factors")
    if factor_dims[spec.system_factor] != 2:
        raise ConfigError("pointer_copy: system factor must be a spin (dimension 2)")
    levels = factor_dims[spec.pointer_factor]
    if levels < 3:
        raise ConfigError(
            f"pointer_copy: pointer factor needs a ready level plus two record levels, got {levels}"
        )
    start, end = spec.window
    duration = end - start
    if not spec.angles_deg:
        raise ConfigError("pointer_copy: no measurement angle")

    if spec.setting_factor is None:
        if len(spec.angles_deg) != 1:
            raise ConfigError("pointer_copy: several angles need a setting factor")
        settings: list[tuple[int | None, float]] = [(None, spec.angles_deg[0])]
    else:
        _check_factor(spec.setting_factor, factor_dims, "pointer_copy setting")
        if spec.setting_factor in (spec.system_factor, spec.pointer_factor):
            raise ConfigError("pointer_copy: setting factor must be its own register")
        if len(spec.angles_deg) > factor_dims[spec.setting_factor]:
            raise ConfigError("pointer_copy: more angles than setting register levels")
        settings = list(enumerate(spec.angles_deg))

    shifts = [shift_generator(levels, steps, duration) for steps in (1, 2)]
    generator = np.zeros((math.prod(factor_dims),) * 2, dtype=complex)
    for setting, angle in settings:
        bloch = angle * (2.0 if spec.analyzer else 1.0)
        basis = spin_eigenbasis(bloch)
        for outcome in range(2):
            column = basis[:, outcome]
            local = {
                spec.system_factor: np.outer(column, column.conj()),
                spec.pointer_factor: shifts[outcome],
            }
            if setting is not None:
                selector = np.zeros((factor_dims[spec.setting_factor],) * 2, dtype=complex)
                selector[setting, setting] = 1.0
                local[spec.setting_factor] = selector
            generator += embed(local, factor_dims)
    return HermitianOperator(hermitian_part(generator))


def coupling_generator(spec: Coupling, factor_dims: Sequence[int]) -> HermitianOperator:
    if isinstance(spec, PointerCopy):
        return pointer_copy_generator(spec, factor_dims)
    if spec.interaction.dim != math.prod(factor_dims):
        raise ConfigError(f"coupling interaction has dimension {spec.interaction.dim}")
    return spec.interaction


def validate_config(config: ScenarioConfig) -> None:
    if not config.name:
        raise ConfigError("scenario needs a name")
    if config.kind not in SCENARIO_KINDS:
        raise ConfigError(f"unknown scenario kind {config.kind!r}")
    if not config.factor_dims or any(
        not isinstance(dim, int) or dim < 1 for dim in config.factor_dims
    ):
        raise ConfigError(f"factor_dims must be positive integers, got {config.factor_dims!r}")
    if config.dim > MAX_DIM:
        raise ConfigError(f"state space dimension {config.dim} exceeds {MAX_DIM}")
    if config.initial_state.dim != config.dim:
        raise ConfigError(
            f"initial state has dimension {config.initial_state.dim}, factors give {config.dim}"
        )
    if config.hamiltonian is not None and config.hamiltonian.dim != config.dim:
        raise ConfigError(f"hamiltonian has dimension {config.hamiltonian.dim}")
    if config.mode not in ASSIGNMENT_MODES:
        raise ConfigError(f"mode must be one of {ASSIGNMENT_MODES}, got {config.mode!r}")
    if not isinstance(config.trials, int) or config.trials < 1:
        raise ConfigError(f"trials must be a positive integer, got {config.trials!r}")
    if not isinstance(config.master_seed, int) or not 0 <= config.master_seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {config.master_seed!r}")
    if not config.events:
        raise ConfigError("scenario declares no events")

    times = [event.time for event in config.events]
    if times[0] <= 0.0:
        raise ConfigError("the first event must come after t=0")
    if any(later <= earlier for earlier, later in zip(times, times[1:])):
        raise ConfigError(f"event times must strictly increase, got {times}")
    names = [event.name for event in config.events]
    if len(set(names)) != len(names):
        raise ConfigError(f"event names must be distinct, got {names}")

    for coupling in config.couplings:
        start, end = coupling.window
        if not 0.0 <= start < end:
            raise ConfigError(f"coupling window {coupling.window!r} must satisfy 0 <= start < end")


def _candidates(
    observables: Sequence[Observable], factor_dims: Sequence[int]
) -> MacrostateDecomposition:
    operators = [observable_matrix(spec, factor_dims) for spec in observables]
    try:
        return joint_eigenspace_decomposition(operators, dim=math.prod(factor_dims))
    except NotCommutingError as exc:
        raise ConfigError(f"observables are not compatible: {exc}") from exc


def _segment_propagator(
    start: float,
    end: float,
    hamiltonian: HermitianOperator,
    couplings: Sequence[tuple[tuple[float, float], HermitianOperator]],
) -> UnitaryOperator:
    cuts = {start, end}
    for (window_start, window_end), _ in couplings:
        cuts.update(t for t in (window_start, window_end) if start < t < end)
    ordered = sorted(cuts)
    total = identity(hamiltonian.dim).entries
    for left, right in zip(ordered, ordered[1:]):
        generator = hamiltonian.entries.copy()
        for (window_start, window_end), interaction in couplings:
            if window_start <= left and right <= window_end:
                generator = generator + interaction.entries
        total = propagator(HermitianOperator(generator), right - left).entries @ total
    return check_unitary(total)


def compile_schedule(config: ScenarioConfig) -> Schedule:
    validate_config(config)
    dims = config.factor_dims
    hamiltonian = config.hamiltonian or HermitianOperator(np.zeros((config.dim, config.dim), dtype=complex))
    couplings = [(coupling.window, coupling_generator(coupling, dims)) for coupling in config.couplings]
    macro = _candidates(config.macro_operators, dims)
    conserved = observable_matrix(config.conserved, dims) if config.conserved is not None else None

    initial_label: Label | None = None
    # without macroscopic properties there is nothing to assign at t0
    if config.macro_operators:
        try:
            initial_label = check_initial_macrostate(config.initial_state, macro)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    events = []
    previous = 0.0
    for spec in config.events:
        candidates = macro if spec.observables is None else _candidates(spec.observables, dims)
        width = candidates.num_properties
        if any(not 0 <= index < width for index in spec.record_indices):
            raise ConfigError(f"event {spec.name!r}: record index outside {width} properties")
        events.append(
            ScheduledEvent(
                time=spec.time,
                candidates=candidates,
                name=spec.name,
                propagator=_segment_propagator(previous, spec.time, hamiltonian, couplings),
                record_indices=spec.record_indices,
                outcome_names={canonical_label(key): name for key, name in spec.outcome_names},
            )
        )
        previous = spec.time

    logger.debug(
        "compiled %s: dim %d, %d macrostates, %d events", config.name, config.dim, len(macro), len(events)
    )
    return Schedule(
        config=config,
        hamiltonian=hamiltonian,
        macro=macro,
        events=tuple(events),
        conserved=conserved,
        initial_label=initial_label,
    )


# JSON document model


def encode_vector(values: np.ndarray) -> list[list[float]]:
    return [[float(value.real), float(value.imag)] for value in np.asarray(values, dtype=complex)]


def decode_vector(pairs: Any, what: str) -> np.ndarray:
    try:
        return np.array([complex(float(re), float(im)) for re, im in pairs], dtype=complex)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{what}: expected a list of [re, im] pairs") from exc


def encode_matrix(matrix: np.ndarray) -> list[list[list[float]]]:
    return [encode_vector(row) for row in np.asarray(matrix, dtype=complex)]


def decode_matrix(rows: Any, what: str) -> np.ndarray:
    if not isinstance(rows, list) or not rows:
        raise ConfigError(f"{what}: expected a non-empty row-major matrix")
    decoded = [decode_vector(row, what) for row in rows]
    if len({row.shape[0] for row in decoded}) != 1:
        raise ConfigError(f"{what}: rows have different lengths")
    return np.vstack(decoded)


def _hermitian_from(rows: Any, what: str) -> HermitianOperator:
    try:
        return HermitianOperator(decode_matrix(rows, what))
    except (NotHermitianError, DimensionError) as exc:
        raise ConfigError(f"{what}: {exc}") from exc


def observable_to_dict(spec: Observable) -> dict[str, Any]:
    if isinstance(spec, RegisterObservable):
        return {"type": "register", "factor": spec.factor}
    if isinstance(spec, SpinObservable):
        return {"type": "spin", "factor": spec.factor, "angle_deg": spec.angle_deg, "analyzer": spec.analyzer}
    return {"type": "matrix", "matrix": encode_matrix(spec.matrix.entries)}


def observable_from_dict(raw: Mapping[str, Any]) -> Observable:
    kind = raw.get("type")
    if kind == "register":
        return RegisterObservable(factor=int(raw["factor"]))
    if kind == "spin":
        return SpinObservable(
            factor=int(raw["factor"]),
            angle_deg=float(raw.get("angle_deg", 0.0)),
            analyzer=bool(raw.get("analyzer", False)),
        )
    if kind == "matrix":
        return MatrixObservable(matrix=_hermitian_from(raw.get("matrix"), "observable matrix"))
    raise ConfigError(f"unknown observable type {kind!r}")


def coupling_to_dict(spec: Coupling) -> dict[str, Any]:
    if isinstance(spec, PointerCopy):
        return {
            "type": "pointer_copy",
            "window": list(spec.window),
            "system_factor": spec.system_factor,
            "pointer_factor": spec.pointer_factor,
            "angles_deg": list(spec.angles_deg),
            "setting_factor": spec.setting_factor,
            "analyzer": spec.analyzer,
        }
    return {
        "type": "matrix",
        "window": list(spec.window),
        "interaction": encode_matrix(spec.interaction.entries),
    }


def _window(raw: Any) -> tuple[float, float]:
    try:
        start, end = raw
        return float(start), float(end)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"coupling window must be [start, end], got {raw!r}") from exc


def coupling_from_dict(raw: Mapping[str, Any]) -> Coupling:
    kind = raw.get("type")
    if kind == "pointer_copy":
        setting = raw.get("setting_factor")
        return PointerCopy(
            window=_window(raw.get("window")),
            system_factor=int(raw["system_factor"]),
            pointer_factor=int(raw["pointer_factor"]),
            angles_deg=tuple(float(angle) for angle in raw.get("angles_deg", ())),
            setting_factor=None if setting is None else int(setting),
            analyzer=bool(raw.get("analyzer", False)),
        )
    if kind == "matrix":
        return MatrixCoupling(
            window=_window(raw.get("window")),
            interaction=_hermitian_from(raw.get("interaction"), "coupling interaction"),
        )
    raise ConfigError(f"unknown coupling type {kind!r}")


def event_to_dict(spec: EventSpec) -> dict[str, Any]:
    return {
        "time": spec.time,
        "name": spec.name,
        "observables": None
        if spec.observables is None
        else [observable_to_dict(observable) for observable in spec.observables],
        "record_indices": list(spec.record_indices),
        "outcome_names": [[list(key), name] for key, name in spec.outcome_names],
    }


def event_from_dict(raw: Mapping[str, Any]) -> EventSpec:
    observables = raw.get("observables")
    return EventSpec(
        time=float(raw["time"]),
        name=str(raw.get("name", "event")),
        observables=None
        if observables is None
        else tuple(observable_from_dict(observable) for observable in observables),
        record_indices=tuple(int(index) for index in raw.get("record_indices", ())),
        outcome_names=tuple(
            (tuple(float(value) for value in key), str(name))
            for key, name in raw.get("outcome_names", ())
        ),
    )


def config_to_dict(config: ScenarioConfig) -> dict[str, Any]:
    return {
        "name": config.name,
        "kind": config.kind,
        "factor_dims": list(config.factor_dims),
        "initial_state": encode_vector(config.initial_state.amplitudes),
        "hamiltonian": None if config.hamiltonian is None else encode_matrix(config.hamiltonian.entries),
        "couplings": [coupling_to_dict(coupling) for coupling in config.couplings],
        "macro_operators": [observable_to_dict(observable) for observable in config.macro_operators],
        "events": [event_to_dict(event) for event in config.events],
        "conserved": None if config.conserved is None else observable_to_dict(config.conserved),
        "mode": config.mode,
        "trials": config.trials,
        "seed": config.master_seed,
        "params": dict(config.params),
    }


def config_from_dict(raw: Mapping[str, Any]) -> ScenarioConfig:
    if not isinstance(raw, Mapping):
        raise ConfigError("config document must be a JSON object")
    try:
        amplitudes = decode_vector(raw["initial_state"], "initial_state")
        try:
            initial_state = make_state(amplitudes)
        except (ZeroStateError, DimensionError) as exc:
            raise ConfigError(f"initial_state: {exc}") from exc
        if abs(float(np.linalg.norm(amplitudes)) - 1.0) > 1e-9:
            raise ConfigError("initial_state must be normalized")
        hamiltonian = raw.get("hamiltonian")
        conserved = raw.get("conserved")
        config = ScenarioConfig(
            name=str(raw["name"]),
            kind=str(raw.get("kind", "generic")),
            factor_dims=tuple(int(dim) for dim in raw["factor_dims"]),
            initial_state=initial_state,
            hamiltonian=None if hamiltonian is None else _hermitian_from(hamiltonian, "hamiltonian"),
            couplings=tuple(coupling_from_dict(coupling) for coupling in raw.get("couplings", ())),
            macro_operators=tuple(
                observable_from_dict(observable) for observable in raw.get("macro_operators", ())
            ),
            events=tuple(event_from_dict(event) for event in raw.get("events", ())),
            conserved=None if conserved is None else observable_from_dict(conserved),
            mode=str(raw.get("mode", "free")),
            trials=int(raw.get("trials", 1000)),
            master_seed=int(raw.get("seed", 0)),
            params=dict(raw.get("params") or {}),
        )
    except ConfigError:
        raise
    except KeyError as exc:
        raise ConfigError(f"config is missing required key {exc.args[0]!r}") from exc
    except (TypeError, ValueError, NumericalError) as exc:
        raise ConfigError(f"malformed config: {exc}") from exc
    validate_config(config)
    return config


def load_config(path: Path | str) -> ScenarioConfig:
    config_path = Path(path)
    try:
        raw = json.loads(config_path.read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {config_path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from exc
    return config_from_dict(raw)


def dump_config(config: ScenarioConfig, path: Path | str) -> Path:
    config_path = Path(path)
    config_path.parent.mkdir(parents=True, exist_ok=True)
    config_path.write_text(json.dumps(config_to_dict(config), indent=2) + "\n", encoding="utf-8")
    return config_path
