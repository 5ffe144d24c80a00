"""Textbook projection-postulate reference used to check physication statistics."""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from .experiment import ScenarioConfig, Schedule, compile_schedule
from .hilbert import StateVector, ZeroStateError, apply, make_state
from .macrostate import Label, MacrostateDecomposition, born_weights, canonical_label
from .physication import ZERO_WEIGHT, sample_label

logger = logging.getLogger(__name__)

DEFAULT_ENUMERATION_CAP = 10**6


@dataclass
class EnumerationCapError(RuntimeError):
    cap: int
    reached: int

    def __str__(self) -> str:
        return f"outcome enumeration reached {self.reached} branches, above the cap of {self.cap}"


def outcome_distribution(state: StateVector, decomp: MacrostateDecomposition) -> dict[Label, float]:
    return born_weights(state, decomp)


def collapse(state: StateVector, decomp: MacrostateDecomposition, label: Label) -> StateVector:
    projected = decomp.projector(label).entries @ state.amplitudes
    if np.linalg.norm(projected) ** 2 < ZERO_WEIGHT:
        raise ZeroStateError(f"outcome {canonical_label(label)} has zero probability")
    return make_state(projected)


def measure_collapse(
    state: StateVector, decomp: MacrostateDecomposition, rng_stream: np.random.Generator
) -> tuple[Label, StateVector]:
    weights = outcome_distribution(state, decomp)
    support = {label: weight for label, weight in weights.items() if weight >= ZERO_WEIGHT}
    label = sample_label(support, rng_stream)
    return label, collapse(state, decomp, label)


def chain_distribution(
    scenario: ScenarioConfig | Schedule, cap: int = DEFAULT_ENUMERATION_CAP
) -> dict[tuple[str, ...], float]:
    schedule = scenario if isinstance(scenario, Schedule) else compile_schedule(scenario)
    branches: list[tuple[float, StateVector, tuple[str, ...]]] = [
        (1.0, schedule.config.initial_state, ())
    ]
    for event in schedule.events:
        successors = []
        for probability, state, key in branches:
            evolved = apply(event.propagator, state)
            weights = outcome_distribution(evolved, event.candidates)
            for label in sorted(weights):
                weight = weights[label]
                if weight < ZERO_WEIGHT:
                    continue
                successors.append(
                    (probability * weight, collapse(evolved, event.candidates, label), key + (event.outcome(label),))
                )
            if len(successors) > cap:
                raise EnumerationCapError(cap=cap, reached=len(successors))
        branches = successors

    distribution: dict[tuple[str, ...], float] = defaultdict(float)
    for probability, _, key in branches:
        distribution[key] += probability
    logger.debug("collapse oracle: %d branches, %d sequences", len(branches), len(distribution))
    return dict(distribution)
