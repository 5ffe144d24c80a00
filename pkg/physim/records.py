"""Line-delimited JSON records: one header, optional ledger events, one summary."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable, Iterator, Mapping, TextIO

from . import __version__
from .experiment import ScenarioConfig, Schedule, config_to_dict
from .physication import AssignmentLedger
from .scenarios import RunStatistics

SEQUENCE_SEPARATOR = ","


def sequence_key(outcomes: Iterable[str]) -> str:
    return SEQUENCE_SEPARATOR.join(outcomes)


def _chain(values: Mapping[tuple[str, ...], float | int]) -> dict[str, float | int]:
    return {sequence_key(key): value for key, value in sorted(values.items())}


def header_record(config: ScenarioConfig) -> dict[str, Any]:
    return {
        "record": "header",
        "version": __version__,
        "name": config.name,
        "seed": config.master_seed,
        "mode": config.mode,
        "trials": config.trials,
        "config": config_to_dict(config),
    }


def ledger_records(trial: int, ledger: AssignmentLedger, schedule: Schedule) -> Iterator[dict[str, Any]]:
    for index, event in enumerate(ledger):
        yield {
            "record": "ledger",
            "trial": trial,
            "event": index,
            "name": event.name,
            "time": event.time,
            "candidates": [list(label) for label in event.candidates.labels],
            "weights": [[list(label), weight] for label, weight in sorted(event.born_weights.items())],
            "chosen": list(event.chosen),
            "outcome": schedule.events[index].outcome(event.chosen),
            "trivial": event.trivial,
            "fidelity": event.fidelity,
        }


def summary_record(stats: RunStatistics, *, include_timing: bool = False) -> dict[str, Any]:
    record = {
        "record": "summary",
        "name": stats.name,
        "trials": stats.trials,
        "exact_chain": _chain(stats.exact_chain),
        "oracle_chain": _chain(stats.oracle_chain),
        "empirical_counts": _chain(stats.empirical_counts),
        "tvd_vs_oracle": stats.tvd_vs_oracle,
        "oracle_deviation": stats.oracle_deviation,
        "conserved_drift": stats.conserved_drift,
        "correlation_estimates": dict(sorted(stats.correlation_estimates.items())),
        "diagnostics": dict(sorted(stats.diagnostics.items())),
        "ledger_failures": stats.ledger_failures,
    }
    if include_timing:
        record["wall_time"] = stats.wall_time
    return record


def encode_record(record: Mapping[str, Any]) -> str:
    # repr-based float output is the shortest string that round-trips exactly
    return json.dumps(record, separators=(",", ":"), ensure_ascii=False, allow_nan=False)


def write_records(records: Iterable[Mapping[str, Any]], sink: TextIO) -> int:
    written = 0
    for record in records:
        sink.write(encode_record(record) + "\n")
        written += 1
    sink.flush()
    return written


def read_records(path: Path | str) -> list[dict[str, Any]]:
    records = []
    with Path(path).open("r", encoding="utf-8") as handle:
        for line in handle:
            line = line.strip()
            if line:
                records.append(json.loads(line))
    return records
