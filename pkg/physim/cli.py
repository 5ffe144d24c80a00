from __future__ import annotations

import argparse
import contextlib
import itertools
import logging
import os
import sys
from pathlib import Path
from typing import Iterator, Sequence, TextIO

from .collapse_oracle import DEFAULT_ENUMERATION_CAP, EnumerationCapError
from .experiment import ConfigError, ScenarioConfig, load_config, validate_config
from .exporters import export_csv_files
from .hilbert import DimensionError, NotHermitianError, NotUnitaryError, NumericalError, ZeroStateError
from .physication import ASSIGNMENT_MODES, AssignmentLedger, PhysicationError
from .records import header_record, ledger_records, summary_record, write_records
from .scenarios import RunStatistics, build_scenario, builtin_scenarios, explain, run_scenario, verify_scenario

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_INVARIANT = 3

NUMERICAL_ERRORS = (
    DimensionError,
    NotHermitianError,
    NotUnitaryError,
    NumericalError,
    ZeroStateError,
    EnumerationCapError,
)


def _env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None:
        return default
    try:
        return int(value)
    except ValueError:
        return default


class _ArgumentParser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_scenario_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument(
        "--scenario",
        default=None,
        help="Built-in scenario name or path to a JSON config (see `list`).",
    )
    parser.add_argument("--config", default=None, help="Path to a JSON scenario config.")
    parser.add_argument("--seed", type=int, default=None, help="Master seed (unsigned 64-bit).")
    parser.add_argument("--trials", type=int, default=None, help="Number of sampled trials.")
    parser.add_argument(
        "--mode",
        choices=ASSIGNMENT_MODES,
        default=None,
        help="Assignment mode: free, or strict (assignment commutes with H).",
    )


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(
        prog="physim",
        description="Run single-world unitary measurement scenarios and check them against a collapse oracle.",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", help="Run a scenario and write line-delimited results.")
    _add_scenario_arguments(run_parser)
    run_parser.add_argument("--out", default="-", help="Results file ('-' for stdout).")
    run_parser.add_argument(
        "--emit-ledger",
        action="store_true",
        help="Write one record per ledger event per trial.",
    )
    run_parser.add_argument(
        "--tol",
        type=float,
        default=1e-9,
        help="Largest accepted deviation from the collapse oracle per outcome sequence.",
    )
    run_parser.add_argument(
        "--timing",
        action="store_true",
        help="Include wall time in the summary record (output is then no longer reproducible).",
    )

    verify_parser = subparsers.add_parser("verify", help="Run the invariant suite without sampling.")
    _add_scenario_arguments(verify_parser)
    verify_parser.add_argument("--tol", type=float, default=1e-9, help="Tolerance for the checks.")

    subparsers.add_parser("list", help="List built-in scenarios.")

    explain_parser = subparsers.add_parser("explain", help="Print a scenario's event schedule.")
    _add_scenario_arguments(explain_parser)

    export_parser = subparsers.add_parser("export-csv", help="Export a results file into CSV files.")
    export_parser.add_argument("--results", required=True, help="Results file written by `run`.")
    export_parser.add_argument("--export-dir", default="exports", help="Where to write CSV exports.")

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)

    logging.basicConfig(level=logging.INFO, format="%(levelname)s: %(message)s")

    if args.command == "run":
        return _run(args)
    if args.command == "verify":
        return _verify(args)
    if args.command == "list":
        return _list()
    if args.command == "explain":
        return _explain(args)
    if args.command == "export-csv":
        return _run_export(args)

    parser.error(f"Unknown command: {args.command}")
    return EXIT_CONFIG


def parse_and_dispatch(argv: Sequence[str] | None = None) -> int:
    return main(list(argv) if argv is not None else None)


def _resolve_config(args: argparse.Namespace) -> ScenarioConfig:
    if args.config:
        config = load_config(args.config)
    elif args.scenario:
        candidate = Path(args.scenario)
        if candidate.suffix == ".json" or candidate.is_file():
            config = load_config(candidate)
        else:
            config = build_scenario(args.scenario)
    else:
        raise ConfigError("pass --scenario or --config")

    changes = {}
    if args.seed is not None:
        changes["master_seed"] = args.seed
    if args.trials is not None:
        changes["trials"] = args.trials
    if args.mode is not None:
        changes["mode"] = args.mode
    if changes:
        config = config.replace(**changes)
        validate_config(config)
    return config


def _print_progress(event: dict[str, object]) -> None:
    completed = int(event.get("completed_trials", 0))
    total = event.get("total_trials")
    percent_complete = event.get("percent_complete")
    if isinstance(total, int) and isinstance(percent_complete, (int, float)):
        progress = f"{completed}/{total} ({float(percent_complete):.1f}%)"
    else:
        progress = f"{completed} trials"
    print(f"Trial progress: {progress}", file=sys.stderr, flush=True)


def emit_results(
    stats: RunStatistics,
    ledgers: Sequence[AssignmentLedger] | None,
    sink: TextIO,
    *,
    include_timing: bool = False,
) -> int:
    records = itertools.chain(
        [header_record(stats.config)],
        itertools.chain.from_iterable(
            ledger_records(trial, ledger, stats.schedule) for trial, ledger in enumerate(ledgers or ())
        ),
        [summary_record(stats, include_timing=include_timing)],
    )
    return write_records(records, sink)


@contextlib.contextmanager
def _open_sink(target: str) -> Iterator[TextIO]:
    if target == "-":
        yield sys.stdout
        return
    path = Path(target)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="\n") as handle:
        yield handle


def _run(args: argparse.Namespace) -> int:
    threads = max(1, _env_int("PHYSIM_THREADS", 1))
    cap = _env_int("PHYSIM_ENUMERATION_CAP", DEFAULT_ENUMERATION_CAP)
    try:
        config = _resolve_config(args)
        stats = run_scenario(config, threads=threads, cap=cap, progress_hook=_print_progress)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except PhysicationError as exc:
        print(f"Invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except NUMERICAL_ERRORS as exc:
        print(f"Numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    try:
        with _open_sink(args.out) as sink:
            emit_results(stats, stats.ledgers() if args.emit_ledger else None, sink, include_timing=args.timing)
    except OSError as exc:
        print(f"Could not write results: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    console = sys.stderr if args.out == "-" else sys.stdout
    print(
        f"Ran {stats.name}: {stats.trials} trials, {len(stats.exact_chain)} outcome sequences, "
        f"TVD {stats.tvd_vs_oracle:.4g}, oracle deviation {stats.oracle_deviation:.3e}",
        file=console,
    )
    for name, value in sorted(stats.correlation_estimates.items()):
        print(f"  {name} = {value:.10g}", file=console)
    if args.out != "-":
        print(f"Results written to {args.out}", file=console)

    if stats.ledger_failures:
        print(f"{stats.ledger_failures} ledger(s) failed verification.", file=sys.stderr)
        return EXIT_INVARIANT
    if stats.oracle_deviation > args.tol:
        print(
            f"Physication chain deviates from the oracle by {stats.oracle_deviation:.3e} (> {args.tol:g}).",
            file=sys.stderr,
        )
        return EXIT_INVARIANT
    return EXIT_OK


def _verify(args: argparse.Namespace) -> int:
    cap = _env_int("PHYSIM_ENUMERATION_CAP", DEFAULT_ENUMERATION_CAP)
    try:
        config = _resolve_config(args)
        report = verify_scenario(config, tol=args.tol, cap=cap)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    except PhysicationError as exc:
        print(f"Invariant failure: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except NUMERICAL_ERRORS as exc:
        print(f"Numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL

    for name, ok in report.checks.items():
        status = "ok" if ok else "FAILED"
        print(f"{name:<24} {status:<7} {report.values[name]:.3e}")
    if not report.passed:
        print(f"{config.name}: {len(report.failures())} check(s) failed.", file=sys.stderr)
        return EXIT_INVARIANT
    print(f"{config.name}: all {len(report.checks)} checks passed.")
    return EXIT_OK


def _list() -> int:
    for name, scenario in builtin_scenarios().items():
        print(f"{name:<24} {scenario.description}")
    return EXIT_OK


def _explain(args: argparse.Namespace) -> int:
    try:
        config = _resolve_config(args)
        lines = explain(config)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    for line in lines:
        print(line)
    return EXIT_OK


def _run_export(args: argparse.Namespace) -> int:
    results = Path(args.results)
    if not results.exists():
        print(f"Results file not found: {results}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        counts = export_csv_files(results, args.export_dir)
    except (ValueError, OSError) as exc:
        print(f"CSV export failed: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    for filename, row_count in counts.items():
        print(f"Exported {filename} ({row_count} rows)")

    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
