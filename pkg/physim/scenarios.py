from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

from .collapse_oracle import DEFAULT_ENUMERATION_CAP, chain_distribution, collapse, outcome_distribution
from .experiment import (
    CONSERVED_NAME,
    ConfigError,
    EventSpec,
    MatrixCoupling,
    MatrixObservable,
    PointerCopy,
    RegisterObservable,
    ScenarioConfig,
    Schedule,
    SpinObservable,
    compile_schedule,
)
from .hilbert import (
    PAULI_X,
    PAULI_Y,
    PAULI_Z,
    HermitianOperator,
    StateVector,
    conjugate,
    expectation,
    identity,
    make_state,
    schmidt_rank,
    spin_eigenbasis,
    tensor,
)
from .macrostate import format_label
from .physication import (
    AssignmentLedger,
    ScheduledEvent,
    UnphysicatedSectorExhausted,
    fresh_observable,
    prepare_step,
    verify_ledger,
)
from .runner import BranchTree, Leaf, ProgressHook, TrialBatch, physication_chain, run_trials

logger = logging.getLogger(__name__)

UP = (1.0, 0.0)
DOWN = (0.0, 1.0)
SPIN_OUTCOMES = (((1.0,), "+"), ((2.0,), "-"))
SETTING_NAMES = {(0.0, 0.0): "a:b", (0.0, 1.0): "a:b'", (1.0, 0.0): "a':b", (1.0, 1.0): "a':b'"}


# state helpers


def basis_vector(dim: int, index: int = 0) -> np.ndarray:
    vector = np.zeros(dim, dtype=complex)
    vector[index] = 1.0
    return vector


def spin_state(angle_deg: float) -> np.ndarray:
    return spin_eigenbasis(angle_deg)[:, 0]


def product_state(vectors: Sequence[Sequence[complex] | np.ndarray]) -> StateVector:
    return tensor([make_state(vector) for vector in vectors])


def singlet() -> StateVector:
    up, down = np.array(UP), np.array(DOWN)
    return make_state(np.kron(up, down) - np.kron(down, up))


def _with_singlet(rest: Sequence[np.ndarray]) -> StateVector:
    return tensor([singlet()] + [make_state(vector) for vector in rest])


# built-in configurations


def fresh_spin_config(
    amplitudes: Sequence[complex] = (0.6, 0.8),
    *,
    name: str = "fresh_spin",
    trials: int = 100_000,
    seed: int = 42,
    mode: str = "free",
) -> ScenarioConfig:
    return ScenarioConfig(
        name=name,
        kind="fresh_spin",
        factor_dims=(2,),
        initial_state=make_state(amplitudes),
        macro_operators=(RegisterObservable(factor=0),),
        events=(
            EventSpec(
                time=1.0,
                name="observe",
                outcome_names=(((0.0,), "up"), ((1.0,), "down")),
            ),
        ),
        mode=mode,
        trials=trials,
        master_seed=seed,
    )


def prepare_measure_config(
    theta_deg: float = 60.0,
    *,
    prepared_deg: float = 0.0,
    name: str | None = None,
    trials: int = 100_000,
    seed: int = 42,
    mode: str = "free",
) -> ScenarioConfig:
    return ScenarioConfig(
        name=name or "prepare_measure",
        kind="prepare_measure",
        factor_dims=(2, 3),
        initial_state=product_state([spin_state(prepared_deg), basis_vector(3)]),
        couplings=(
            PointerCopy(window=(0.5, 1.0), system_factor=0, pointer_factor=1, angles_deg=(theta_deg,)),
        ),
        macro_operators=(RegisterObservable(factor=1),),
        events=(EventSpec(time=1.0, name="observe", record_indices=(0,), outcome_names=SPIN_OUTCOMES),),
        mode=mode,
        trials=trials,
        master_seed=seed,
        params={"theta_deg": theta_deg, "prepared_deg": prepared_deg, "cut": 1},
    )


def _party_events(
    alice_first: bool, settings: bool
) -> tuple[tuple[float, float], tuple[EventSpec, ...]]:
    alice_time, bob_time = (2.0, 3.0) if alice_first else (3.0, 2.0)
    events = [
        EventSpec(time=alice_time, name="alice", record_indices=(2,) if settings else (0,), outcome_names=SPIN_OUTCOMES),
        EventSpec(time=bob_time, name="bob", record_indices=(3,) if settings else (1,), outcome_names=SPIN_OUTCOMES),
    ]
    if settings:
        events.append(
            EventSpec(
                time=1.0,
                name="settings",
                record_indices=(0, 1),
                outcome_names=tuple(SETTING_NAMES.items()),
            )
        )
    return (alice_time, bob_time), tuple(sorted(events, key=lambda event: event.time))


def epr_config(
    alice_deg: float,
    bob_deg: float,
    *,
    name: str | None = None,
    bob_first: bool = False,
    trials: int = 100_000,
    seed: int = 42,
    mode: str = "free",
) -> ScenarioConfig:
    (alice_time, bob_time), events = _party_events(not bob_first, settings=False)
    return ScenarioConfig(
        name=name or f"epr_{alice_deg:g}_{bob_deg:g}",
        kind="epr_chsh",
        factor_dims=(2, 2, 3, 3),
        initial_state=_with_singlet([basis_vector(3), basis_vector(3)]),
        couplings=(
            PointerCopy(window=(alice_time - 0.5, alice_time), system_factor=0, pointer_factor=2, angles_deg=(alice_deg,)),
            PointerCopy(window=(bob_time - 0.5, bob_time), system_factor=1, pointer_factor=3, angles_deg=(bob_deg,)),
        ),
        macro_operators=(RegisterObservable(factor=2), RegisterObservable(factor=3)),
        events=events,
        mode=mode,
        trials=trials,
        master_seed=seed,
        params={"preset": "angles", "alice_deg": alice_deg, "bob_deg": bob_deg},
    )


def chsh_config(
    alice_angles_deg: tuple[float, float] = (0.0, 45.0),
    bob_angles_deg: tuple[float, float] = (22.5, 67.5),
    *,
    name: str = "epr_chsh",
    bob_first: bool = False,
    trials: int = 100_000,
    seed: int = 42,
    mode: str = "free",
) -> ScenarioConfig:
    """CHSH run with analyzer angles; each party's setting qubit starts in |+>."""
    (alice_time, bob_time), events = _party_events(not bob_first, settings=True)
    plus = np.array([1.0, 1.0]) / math.sqrt(2.0)
    return ScenarioConfig(
        name=name,
        kind="epr_chsh",
        factor_dims=(2, 2, 2, 2, 3, 3),
        initial_state=_with_singlet([plus, plus, basis_vector(3), basis_vector(3)]),
        couplings=(
            PointerCopy(
                window=(alice_time - 0.5, alice_time),
                system_factor=0,
                pointer_factor=4,
                angles_deg=tuple(alice_angles_deg),
                setting_factor=2,
                analyzer=True,
            ),
            PointerCopy(
                window=(bob_time - 0.5, bob_time),
                system_factor=1,
                pointer_factor=5,
                angles_deg=tuple(bob_angles_deg),
                setting_factor=3,
                analyzer=True,
            ),
        ),
        macro_operators=tuple(RegisterObservable(factor=factor) for factor in (2, 3, 4, 5)),
        events=events,
        mode=mode,
        trials=trials,
        master_seed=seed,
        params={
            "preset": "chsh",
            "alice_angles_deg": list(alice_angles_deg),
            "bob_angles_deg": list(bob_angles_deg),
        },
    )


def sequential_chain_config(
    axes_deg: Sequence[float] = (0.0, 90.0, 0.0),
    *,
    prepared_deg: float = 60.0,
    pointers: int | None = None,
    name: str | None = None,
    trials: int = 100_000,
    seed: int = 7,
    mode: str = "free",
) -> ScenarioConfig:
    """Successive spin measurements; the first `pointers` of them are recorded
    in fresh qutrit registers, the rest read the bare spin."""
    count = len(axes_deg) if pointers is None else pointers
    if not 0 <= count <= len(axes_deg):
        raise ConfigError(f"pointer count {count} outside [0, {len(axes_deg)}]")
    couplings = []
    events = []
    for index, axis in enumerate(axes_deg):
        when = float(index + 1)
        if index < count:
            couplings.append(
                PointerCopy(window=(when - 0.5, when), system_factor=0, pointer_factor=index + 1, angles_deg=(axis,))
            )
            events.append(
                EventSpec(time=when, name=f"m{index + 1}", record_indices=(index,), outcome_names=SPIN_OUTCOMES)
            )
        else:
            events.append(
                EventSpec(
                    time=when,
                    name=f"m{index + 1}",
                    observables=(SpinObservable(factor=0, angle_deg=axis),),
                    record_indices=(0,),
                    outcome_names=(((1.0,), "+"), ((-1.0,), "-")),
                )
            )
    return ScenarioConfig(
        name=name or "sequential_chain",
        kind="sequential_chain",
        factor_dims=(2,) + (3,) * count,
        initial_state=product_state([spin_state(prepared_deg)] + [basis_vector(3)] * count),
        couplings=tuple(couplings),
        macro_operators=tuple(RegisterObservable(factor=index + 1) for index in range(count)),
        events=tuple(events),
        mode=mode,
        trials=trials,
        master_seed=seed,
        params={"axes_deg": list(axes_deg), "prepared_deg": prepared_deg, "pointers": count},
    )


def conservation_config(
    coupling_j: float = 1.0,
    *,
    name: str = "conservation",
    trials: int = 100_000,
    seed: int = 42,
    mode: str = "free",
) -> ScenarioConfig:
    """Exchange-coupled spin pair; total z-magnetization commutes with H,
    and the environment spin is observed along x at J*t = pi/8."""
    exchange = 0.5 * coupling_j * (
        tensor([PAULI_X, PAULI_X]).entries + tensor([PAULI_Y, PAULI_Y]).entries
    )
    total_z = tensor([PAULI_Z, HermitianOperator(np.eye(2))]).entries + tensor(
        [HermitianOperator(np.eye(2)), PAULI_Z]
    ).entries
    return ScenarioConfig(
        name=name,
        kind="conservation",
        factor_dims=(2, 2),
        initial_state=product_state([UP, DOWN]),
        hamiltonian=HermitianOperator(exchange),
        macro_operators=(SpinObservable(factor=1, angle_deg=90.0),),
        events=(
            EventSpec(
                time=math.pi / (8.0 * coupling_j),
                name="observe",
                record_indices=(0,),
                outcome_names=(((1.0,), "+x"), ((-1.0,), "-x")),
            ),
        ),
        conserved=MatrixObservable(matrix=HermitianOperator(total_z)),
        mode=mode,
        trials=trials,
        master_seed=seed,
        params={"coupling_j": coupling_j},
    )


@dataclass(frozen=True)
class BuiltinScenario:
    name: str
    description: str
    build: Callable[[], ScenarioConfig]


def _builtin_list() -> list[BuiltinScenario]:
    return [
        BuiltinScenario("fresh_spin", "first observation of a spin in (0.6, 0.8)", fresh_spin_config),
        BuiltinScenario(
            "fresh_spin_eigenstate",
            "first observation of a spin already up",
            lambda: fresh_spin_config((1.0, 0.0), name="fresh_spin_eigenstate"),
        ),
        BuiltinScenario("prepare_measure", "prepare z-up, pointer-measure the 60 degree axis", prepare_measure_config),
        *[
            BuiltinScenario(
                f"prepare_measure_{angle}",
                f"prepare z-up, pointer-measure the {angle} degree axis",
                (lambda angle=angle: prepare_measure_config(float(angle), name=f"prepare_measure_{angle}")),
            )
            for angle in (0, 45, 90)
        ],
        BuiltinScenario("epr_chsh", "singlet with random analyzer settings (CHSH)", chsh_config),
        BuiltinScenario(
            "epr_chsh_bob_first",
            "CHSH run with Bob's observation first",
            lambda: chsh_config(name="epr_chsh_bob_first", bob_first=True),
        ),
        BuiltinScenario("epr_same_axis", "singlet, both parties on the z axis", lambda: epr_config(0.0, 0.0, name="epr_same_axis")),
        BuiltinScenario("epr_45", "singlet, Alice 0 and Bob 45 degrees", lambda: epr_config(0.0, 45.0, name="epr_45")),
        BuiltinScenario("epr_orthogonal", "singlet, axes 90 degrees apart", lambda: epr_config(0.0, 90.0, name="epr_orthogonal")),
        BuiltinScenario("sequential_chain", "z, x, z on a spin prepared at 60 degrees", sequential_chain_config),
        BuiltinScenario(
            "sequential_chain_z",
            "z, z, z on a spin prepared at 60 degrees",
            lambda: sequential_chain_config((0.0, 0.0, 0.0), name="sequential_chain_z"),
        ),
        BuiltinScenario(
            "sequential_chain_bare",
            "z, x, z with no pointer registers (runs out of unassigned sector)",
            lambda: sequential_chain_config(pointers=0, name="sequential_chain_bare"),
        ),
        BuiltinScenario("conservation", "exchange-coupled pair, total magnetization carried", conservation_config),
    ]


def builtin_scenarios() -> dict[str, BuiltinScenario]:
    return {scenario.name: scenario for scenario in _builtin_list()}


def build_scenario(name: str) -> ScenarioConfig:
    scenarios = builtin_scenarios()
    if name not in scenarios:
        raise ConfigError(f"unknown scenario {name!r}; choose from {', '.join(sorted(scenarios))}")
    return scenarios[name].build()


def swap_parties(config: ScenarioConfig) -> ScenarioConfig:
    """Exchange the observation times (and coupling windows) of alice and bob."""
    events = {event.name: event for event in config.events}
    if "alice" not in events or "bob" not in events:
        raise ConfigError(f"{config.name}: needs events named 'alice' and 'bob'")
    alice_time, bob_time = events["alice"].time, events["bob"].time
    moved = {alice_time: bob_time, bob_time: alice_time}

    couplings = []
    for coupling in config.couplings:
        start, end = coupling.window
        if end in moved:
            shift = moved[end] - end
            window = (start + shift, end + shift)
            if isinstance(coupling, PointerCopy):
                coupling = PointerCopy(
                    window=window,
                    system_factor=coupling.system_factor,
                    pointer_factor=coupling.pointer_factor,
                    angles_deg=coupling.angles_deg,
                    setting_factor=coupling.setting_factor,
                    analyzer=coupling.analyzer,
                )
            else:
                coupling = MatrixCoupling(window=window, interaction=coupling.interaction)
        couplings.append(coupling)

    swapped = []
    for event in config.events:
        if event.name in ("alice", "bob"):
            event = EventSpec(
                time=moved[event.time],
                name=event.name,
                observables=event.observables,
                record_indices=event.record_indices,
                outcome_names=event.outcome_names,
            )
        swapped.append(event)
    return config.replace(
        name=f"{config.name}_swapped",
        couplings=tuple(couplings),
        events=tuple(sorted(swapped, key=lambda event: event.time)),
    )


# statistics


Chain = dict[tuple[str, ...], float]


@dataclass
class RunStatistics:
    config: ScenarioConfig
    schedule: Schedule
    exact_chain: Chain
    oracle_chain: Chain
    empirical_counts: dict[tuple[str, ...], int]
    tvd_vs_oracle: float
    oracle_deviation: float
    conserved_drift: float | None
    correlation_estimates: dict[str, float] = field(default_factory=dict)
    diagnostics: dict[str, float] = field(default_factory=dict)
    ledger_failures: int = 0
    wall_time: float = 0.0
    batch: TrialBatch | None = field(default=None, repr=False)

    @property
    def name(self) -> str:
        return self.config.name

    @property
    def trials(self) -> int:
        return sum(self.empirical_counts.values())

    def empirical_frequencies(self) -> Chain:
        total = self.trials
        return {key: count / total for key, count in self.empirical_counts.items()} if total else {}

    def ledgers(self) -> list[AssignmentLedger]:
        return list(self.batch.ledgers()) if self.batch is not None else []


@dataclass
class Analysis:
    schedule: Schedule
    leaves: list[Leaf]
    exact_chain: Chain
    oracle_chain: Chain
    oracle_deviation: float
    ledger_failures: int
    norm_deviation: float
    unitarity_deviation: float
    history_mismatch: float
    repetition_failures: int
    conserved_drift: float | None


def max_deviation(left: Mapping[Any, float], right: Mapping[Any, float]) -> float:
    keys = set(left) | set(right)
    return max((abs(left.get(key, 0.0) - right.get(key, 0.0)) for key in keys), default=0.0)


def _norm_deviation(leaf: Leaf) -> float:
    worst = abs(float(np.linalg.norm(leaf.world.state.amplitudes)) - 1.0)
    for event in leaf.world.ledger:
        for state in (event.pre_state, event.post_state):
            worst = max(worst, abs(float(np.linalg.norm(state.amplitudes)) - 1.0))
    return worst


def _unitarity_deviation(leaf: Leaf) -> float:
    history = leaf.world.history.entries
    return float(np.max(np.abs(history @ history.conj().T - np.eye(history.shape[0]))))


def _history_mismatch(schedule: Schedule, leaf: Leaf) -> float:
    replayed = leaf.world.history.entries @ schedule.config.initial_state.amplitudes
    return float(np.linalg.norm(replayed - leaf.world.state.amplitudes))


def _repeats_stably(leaf: Leaf) -> bool:
    if not leaf.world.ledger.events:
        return True
    last = leaf.world.ledger[-1]
    repeat = ScheduledEvent(
        time=leaf.world.time + 1.0,
        candidates=last.candidates,
        name=f"{last.name}_repeat",
        propagator=identity(leaf.world.state.dim),
    )
    pending = prepare_step(leaf.world, repeat)
    return pending.definite and set(pending.support) == {last.chosen}


def conserved_drift(schedule: Schedule, leaves: Iterable[Leaf]) -> float | None:
    """Largest change of the carried conserved quantity along any history."""
    if schedule.conserved is None:
        return None
    baseline = expectation(schedule.config.initial_state, schedule.conserved)
    worst = 0.0
    for leaf in leaves:
        carried = schedule.conserved
        for event in leaf.world.ledger:
            worst = max(worst, abs(expectation(event.pre_state, carried) - baseline))
            if not event.trivial:
                carried = conjugate(carried, event.assignment_unitary)
            worst = max(worst, abs(expectation(event.post_state, carried) - baseline))
        final = leaf.world.unassigned[CONSERVED_NAME]
        worst = max(worst, abs(expectation(leaf.world.state, final) - baseline))
    return worst


def analyse(config: ScenarioConfig, cap: int = DEFAULT_ENUMERATION_CAP) -> Analysis:
    schedule = compile_schedule(config)
    leaves = BranchTree(schedule).enumerate(cap)
    exact = physication_chain(schedule, leaves)
    oracle = chain_distribution(schedule, cap)

    failures = 0
    for leaf in leaves:
        verdict = verify_ledger(leaf.world)
        if not verdict:
            failures += 1
            logger.warning(
                "%s: ledger of history %s fails at event %s: %s",
                config.name,
                " ".join(format_label(label) for label in leaf.path),
                verdict.event_index,
                verdict.reason,
            )
    deviation = max_deviation(exact, oracle)
    if deviation > 1e-9:
        logger.warning("%s: physication chain deviates from the collapse oracle by %.3e", config.name, deviation)
    return Analysis(
        schedule=schedule,
        leaves=leaves,
        exact_chain=exact,
        oracle_chain=oracle,
        oracle_deviation=deviation,
        ledger_failures=failures,
        norm_deviation=max(_norm_deviation(leaf) for leaf in leaves),
        unitarity_deviation=max(_unitarity_deviation(leaf) for leaf in leaves),
        history_mismatch=max(_history_mismatch(schedule, leaf) for leaf in leaves),
        repetition_failures=sum(not _repeats_stably(leaf) for leaf in leaves),
        conserved_drift=conserved_drift(schedule, leaves),
    )


def execute(
    config: ScenarioConfig,
    *,
    threads: int = 1,
    cap: int = DEFAULT_ENUMERATION_CAP,
    progress_hook: ProgressHook | None = None,
) -> RunStatistics:
    started = time.perf_counter()
    analysis = analyse(config, cap)
    batch = run_trials(
        analysis.schedule,
        trials=config.trials,
        master_seed=config.master_seed,
        threads=threads,
        progress_hook=progress_hook,
    )
    failures = analysis.ledger_failures
    for world in batch.leaves.values():
        if not verify_ledger(world):
            failures += 1

    counts = batch.counts()
    ordered_keys = sorted(set(analysis.exact_chain) | set(counts))
    empirical = {key: counts.get(key, 0) for key in ordered_keys}
    tvd = 0.5 * sum(
        abs(empirical[key] / batch.trials - analysis.oracle_chain.get(key, 0.0)) for key in ordered_keys
    )
    logger.info(
        "%s: %d distinct histories, %d trials, TVD %.4g against the oracle",
        config.name,
        len(analysis.leaves),
        batch.trials,
        tvd,
    )
    return RunStatistics(
        config=config,
        schedule=analysis.schedule,
        exact_chain=analysis.exact_chain,
        oracle_chain=analysis.oracle_chain,
        empirical_counts=empirical,
        tvd_vs_oracle=tvd,
        oracle_deviation=analysis.oracle_deviation,
        conserved_drift=analysis.conserved_drift,
        diagnostics={
            "max_norm_deviation": analysis.norm_deviation,
            "max_unitarity_deviation": analysis.unitarity_deviation,
            "max_history_mismatch": analysis.history_mismatch,
            "repetition_failures": float(analysis.repetition_failures),
            "distinct_histories": float(len(analysis.leaves)),
        },
        ledger_failures=failures,
        wall_time=time.perf_counter() - started,
        batch=batch,
    )


# scenario-specific runs


def _first_event_key(stats: RunStatistics, outcome: str) -> float:
    return sum(probability for key, probability in stats.exact_chain.items() if key[0] == outcome)


def run_fresh_spin(config: ScenarioConfig, **options: Any) -> RunStatistics:
    if config.dim != 2:
        raise ConfigError(f"fresh spin needs a single qubit, got dimension {config.dim}")
    if len(config.events) != 1:
        raise ConfigError(f"fresh spin takes a single event, got {len(config.events)}")
    stats = execute(config, **options)

    residual = 0.0
    for world in stats.batch.leaves.values():
        observable = fresh_observable(world.state, (0.5, -0.5))
        amplitudes = world.state.amplitudes
        residual = max(residual, float(np.linalg.norm(observable.entries @ amplitudes - 0.5 * amplitudes)))
    stats.diagnostics["fresh_observable_residual"] = residual

    event = stats.schedule.events[0]
    first = event.outcome(event.candidates.labels[0])
    stats.correlation_estimates[f"P({first})"] = _first_event_key(stats, first)
    stats.correlation_estimates[f"P({first})_empirical"] = stats.empirical_frequencies().get((first,), 0.0)
    return stats


def _require_pointer_coupling(config: ScenarioConfig) -> None:
    recorded = {spec.factor for spec in config.macro_operators if isinstance(spec, RegisterObservable)}
    for event in config.events:
        for spec in event.observables or ():
            if isinstance(spec, RegisterObservable):
                recorded.add(spec.factor)
    if not any(
        isinstance(coupling, PointerCopy) and coupling.pointer_factor in recorded
        for coupling in config.couplings
    ):
        raise ConfigError(
            f"{config.name}: no pointer_copy coupling writes into an observed pointer register"
        )


def run_prepare_measure(config: ScenarioConfig, **options: Any) -> RunStatistics:
    if len(config.factor_dims) < 2:
        raise ConfigError("prepare-measure needs a system factor and an environment factor")
    _require_pointer_coupling(config)
    stats = execute(config, **options)
    cut = int(config.params.get("cut", 1))
    ranks = [
        schmidt_rank(world.state, config.factor_dims, cut) for world in stats.batch.leaves.values()
    ]
    stats.diagnostics["max_schmidt_rank"] = float(max(ranks))
    return stats


def _sign(outcome: str) -> float:
    return 1.0 if outcome.startswith("+") else -1.0


def correlations(schedule: Schedule, chain: Mapping[tuple[str, ...], float]) -> dict[str, float]:
    """E per setting from a chain over (settings?, alice, bob) sequences."""
    names = [event.name for event in schedule.events]
    alice, bob = names.index("alice"), names.index("bob")
    settings = names.index("settings") if "settings" in names else None

    weighted: dict[str, float] = {}
    totals: dict[str, float] = {}
    for key, probability in chain.items():
        setting = key[settings] if settings is not None else ""
        weighted[setting] = weighted.get(setting, 0.0) + _sign(key[alice]) * _sign(key[bob]) * probability
        totals[setting] = totals.get(setting, 0.0) + probability

    estimates: dict[str, float] = {}
    for setting, total in totals.items():
        if total <= 0.0:
            continue
        label = f"E({setting.replace(':', ',')})" if setting else "E"
        estimates[label] = weighted[setting] / total
    if {"E(a,b)", "E(a,b')", "E(a',b)", "E(a',b')"} <= estimates.keys():
        estimates["S"] = estimates["E(a,b)"] - estimates["E(a,b')"] + estimates["E(a',b)"] + estimates["E(a',b')"]
    return estimates


def _by_event_name(schedule: Schedule, chain: Mapping[tuple[str, ...], float], order: Sequence[str]) -> Chain:
    names = [event.name for event in schedule.events]
    return {tuple(dict(zip(names, key))[name] for name in order): value for key, value in chain.items()}


def _check_singlet(config: ScenarioConfig) -> None:
    if config.factor_dims[:2] != (2, 2):
        raise ConfigError("CHSH preset needs the two spins as the first factors")
    amplitudes = config.initial_state.amplitudes.reshape(4, -1)
    pair = singlet().amplitudes
    rest = pair.conj() @ amplitudes
    if float(np.linalg.norm(amplitudes - np.outer(pair, rest))) > 1e-9:
        raise ConfigError("CHSH preset needs the spin pair prepared in the singlet state")


def _check_parties(config: ScenarioConfig) -> None:
    events = {event.name: event for event in config.events}
    for party in ("alice", "bob"):
        if party not in events:
            raise ConfigError(f"{config.name}: EPR run needs an event named {party!r}")
        # correlation signs are read from the outcome names
        prefixes = sorted(name[:1] for _, name in events[party].outcome_names)
        if prefixes != ["+", "-"]:
            raise ConfigError(
                f"{config.name}: event {party!r} must name its two outcomes with a leading '+' and '-'"
            )


def run_epr_chsh(config: ScenarioConfig, **options: Any) -> RunStatistics:
    _check_parties(config)
    if config.params.get("preset") == "chsh":
        _check_singlet(config)
    _require_pointer_coupling(config)
    stats = execute(config, **options)
    estimates = correlations(stats.schedule, stats.exact_chain)
    empirical = correlations(stats.schedule, stats.empirical_frequencies())
    stats.correlation_estimates.update(estimates)
    stats.correlation_estimates.update({f"{key}_empirical": value for key, value in empirical.items()})
    stats.diagnostics["order_swap_deviation"] = order_swap_deviation(config)
    return stats


def order_swap_deviation(config: ScenarioConfig, cap: int = DEFAULT_ENUMERATION_CAP) -> float:
    original = compile_schedule(config)
    swapped_config = swap_parties(config)
    swapped = compile_schedule(swapped_config)
    order = [event.name for event in original.events]
    first = physication_chain(original, BranchTree(original).enumerate(cap))
    second = physication_chain(swapped, BranchTree(swapped).enumerate(cap))
    return max_deviation(first, _by_event_name(swapped, second, order))


def run_sequential_chain(config: ScenarioConfig, **options: Any) -> RunStatistics:
    if len(config.events) < 3:
        raise ConfigError(f"sequential chain needs at least three events, got {len(config.events)}")
    stats = execute(config, **options)
    stats.diagnostics["events_realized"] = float(len(config.events))
    return stats


def collapse_conserved_change(config: ScenarioConfig) -> float:
    """Largest change of the conserved quantity caused by projecting at the first event."""
    schedule = compile_schedule(config)
    if schedule.conserved is None:
        raise ConfigError(f"{config.name}: no conserved quantity declared")
    event = schedule.events[0]
    evolved = make_state(event.propagator.entries @ config.initial_state.amplitudes)
    before = expectation(evolved, schedule.conserved)
    worst = 0.0
    for label, weight in outcome_distribution(evolved, event.candidates).items():
        if weight < 1e-15:
            continue
        after = expectation(collapse(evolved, event.candidates, label), schedule.conserved)
        worst = max(worst, abs(after - before))
    return worst


def run_conservation(config: ScenarioConfig, **options: Any) -> RunStatistics:
    if config.conserved is None:
        raise ConfigError(f"{config.name}: conservation run needs a conserved observable")
    stats = execute(config, **options)
    stats.diagnostics["collapse_delta_conserved"] = collapse_conserved_change(config)
    return stats


def run_generic(config: ScenarioConfig, **options: Any) -> RunStatistics:
    return execute(config, **options)


RUNNERS: dict[str, Callable[..., RunStatistics]] = {
    "fresh_spin": run_fresh_spin,
    "prepare_measure": run_prepare_measure,
    "epr_chsh": run_epr_chsh,
    "sequential_chain": run_sequential_chain,
    "conservation": run_conservation,
    "generic": run_generic,
}


def run_scenario(config: ScenarioConfig, **options: Any) -> RunStatistics:
    return RUNNERS[config.kind](config, **options)


def environment_sweep(
    axes_deg: Sequence[float] = (0.0, 90.0, 0.0), prepared_deg: float = 60.0
) -> dict[int, int]:
    """Events realized before the unassigned sector runs out, per pointer count."""
    realized: dict[int, int] = {}
    for pointers in range(len(axes_deg) + 1):
        config = sequential_chain_config(axes_deg, prepared_deg=prepared_deg, pointers=pointers)
        try:
            BranchTree(compile_schedule(config)).enumerate()
        except UnphysicatedSectorExhausted as exc:
            realized[pointers] = exc.event_index
        else:
            realized[pointers] = len(axes_deg)
    return realized


# verification suite


@dataclass
class VerificationReport:
    name: str
    checks: dict[str, bool] = field(default_factory=dict)
    values: dict[str, float] = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return all(self.checks.values())

    def failures(self) -> list[str]:
        return [name for name, ok in self.checks.items() if not ok]

    def record(self, name: str, value: float, ok: bool) -> None:
        self.values[name] = value
        self.checks[name] = ok


def verify_scenario(
    config: ScenarioConfig, tol: float = 1e-9, cap: int = DEFAULT_ENUMERATION_CAP
) -> VerificationReport:
    analysis = analyse(config, cap)
    report = VerificationReport(name=config.name)
    report.record("oracle_equivalence", analysis.oracle_deviation, analysis.oracle_deviation <= tol)
    total = sum(analysis.exact_chain.values())
    report.record("exact_chain_normalized", abs(total - 1.0), abs(total - 1.0) <= tol)
    report.record("ledgers", float(analysis.ledger_failures), analysis.ledger_failures == 0)
    report.record("norm", analysis.norm_deviation, analysis.norm_deviation <= 1e-10)
    report.record("unitarity", analysis.unitarity_deviation, analysis.unitarity_deviation <= 1e-8)
    report.record("history_replay", analysis.history_mismatch, analysis.history_mismatch <= 1e-8)
    report.record(
        "repetition_stability", float(analysis.repetition_failures), analysis.repetition_failures == 0
    )
    if analysis.conserved_drift is not None:
        report.record("conservation", analysis.conserved_drift, analysis.conserved_drift <= tol)
    if config.kind == "epr_chsh":
        deviation = order_swap_deviation(config, cap)
        report.record("order_independence", deviation, deviation <= tol)
    if config.kind == "prepare_measure":
        cut = int(config.params.get("cut", 1))
        rank = max(schmidt_rank(leaf.world.state, config.factor_dims, cut) for leaf in analysis.leaves)
        report.record("product_post_states", float(rank), rank == 1)
    if config.kind == "conservation":
        change = collapse_conserved_change(config)
        report.record("collapse_contrast", change, change >= 1e-3)
    for name in report.failures():
        logger.warning("%s: check %s failed (value %.3e)", config.name, name, report.values[name])
    return report


def explain(config: ScenarioConfig) -> list[str]:
    schedule = compile_schedule(config)
    lines = [
        f"scenario {config.name} ({config.kind}), mode {config.mode}",
        f"factors {' x '.join(str(dim) for dim in config.factor_dims)} = dimension {config.dim}",
        f"macro decomposition: {len(schedule.macro)} macrostates",
    ]
    if schedule.initial_label is not None:
        lines.append(f"initial macrostate {format_label(schedule.initial_label)}")
    else:
        lines.append("initial state is not in a single macrostate")
    for coupling in config.couplings:
        start, end = coupling.window
        if isinstance(coupling, PointerCopy):
            angles = ", ".join(f"{angle:g}" for angle in coupling.angles_deg)
            what = (
                f"pointer copy: spin factor {coupling.system_factor} -> pointer factor "
                f"{coupling.pointer_factor} at {angles} deg"
            )
            if coupling.setting_factor is not None:
                what += f" selected by factor {coupling.setting_factor}"
            if coupling.analyzer:
                what += " (analyzer angles)"
        else:
            what = "matrix interaction"
        lines.append(f"  [{start:g}, {end:g}] {what}")
    for index, event in enumerate(schedule.events):
        names = sorted(set(event.outcome_names.values()))
        lines.append(
            f"  t={event.time:g} event {index} {event.name!r}: {len(event.candidates)} candidates"
            + (f", outcomes {', '.join(names)}" if names else "")
        )
    if schedule.conserved is not None:
        lines.append("conserved quantity carried as an unassigned operator")
    return lines
