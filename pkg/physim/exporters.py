from __future__ import annotations

from pathlib import Path
from typing import Any

import pandas as pd

from .records import read_records

CHAIN_COLUMNS = ["sequence", "exact", "oracle", "empirical_count", "empirical_frequency"]
LEDGER_COLUMNS = ["trial", "event", "name", "time", "chosen", "outcome", "weight", "trivial", "fidelity"]
ESTIMATE_COLUMNS = ["name", "value"]


def export_csv_files(results_path: Path | str, output_dir: Path | str) -> dict[str, int]:
    out_dir = Path(output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = read_records(results_path)

    summaries = [record for record in records if record.get("record") == "summary"]
    if not summaries:
        raise ValueError(f"{results_path} holds no summary record")
    summary = summaries[-1]

    frames = {
        "exact_chain.csv": _chain_frame(summary),
        "ledger_events.csv": _ledger_frame(records),
        "estimates.csv": _estimate_frame(summary),
    }

    counts: dict[str, int] = {}
    for filename, frame in frames.items():
        frame.to_csv(out_dir / filename, index=False)
        counts[filename] = len(frame)
    return counts


def _chain_frame(summary: dict[str, Any]) -> pd.DataFrame:
    exact = summary.get("exact_chain", {})
    oracle = summary.get("oracle_chain", {})
    counts = summary.get("empirical_counts", {})
    trials = summary.get("trials") or 0
    rows = [
        {
            "sequence": key,
            "exact": exact.get(key, 0.0),
            "oracle": oracle.get(key, 0.0),
            "empirical_count": counts.get(key, 0),
            "empirical_frequency": counts.get(key, 0) / trials if trials else None,
        }
        for key in sorted(set(exact) | set(oracle) | set(counts))
    ]
    return pd.DataFrame(rows, columns=CHAIN_COLUMNS)


def _ledger_frame(records: list[dict[str, Any]]) -> pd.DataFrame:
    rows = []
    for record in records:
        if record.get("record") != "ledger":
            continue
        weights = {tuple(label): weight for label, weight in record.get("weights", [])}
        chosen = record.get("chosen", [])
        rows.append(
            {
                "trial": record.get("trial"),
                "event": record.get("event"),
                "name": record.get("name"),
                "time": record.get("time"),
                "chosen": " ".join(f"{value:g}" for value in chosen),
                "outcome": record.get("outcome"),
                "weight": weights.get(tuple(chosen)),
                "trivial": record.get("trivial"),
                "fidelity": record.get("fidelity"),
            }
        )
    return pd.DataFrame(rows, columns=LEDGER_COLUMNS)


def _estimate_frame(summary: dict[str, Any]) -> pd.DataFrame:
    values = dict(summary.get("correlation_estimates") or {})
    for name, value in (summary.get("diagnostics") or {}).items():
        values[f"diagnostic:{name}"] = value
    for name in ("tvd_vs_oracle", "oracle_deviation", "conserved_drift"):
        if summary.get(name) is not None:
            values[name] = summary[name]
    rows = [{"name": name, "value": value} for name, value in sorted(values.items())]
    return pd.DataFrame(rows, columns=ESTIMATE_COLUMNS)
