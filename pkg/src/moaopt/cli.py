"""Command-line entry point: ``moaopt {ingest,run,evaluate,report}``.

Exit codes: 0 all units succeeded, 2 partial failures (details in the ledger
and on stderr), 1 configuration or environment error.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

from .analytics import COLUMNS
from .config import ConfigError, ExperimentConfig, load_config
from .experiment import Experiment
from .manifest import load_manifest
from .store import LedgerError

EXIT_OK, EXIT_CONFIG, EXIT_PARTIAL = 0, 1, 2


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="moaopt", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("ingest", "hash and store the snippets listed in the manifest"),
        ("run", "generate variants for every unit not yet done"),
        ("evaluate", "run ELO judge tournaments over generated variants"),
        ("report", "write report files and print the comparative table"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="experiment YAML file")
        p.add_argument("--mock", action="store_true", help="use the deterministic mock backend")
        p.add_argument("--seed", type=int, help="override the global seed")
        p.add_argument("--output", help="override the output directory")
        p.add_argument("--resume", action="store_true",
                       help="reuse recorded calls of interrupted units instead of re-issuing them")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def _load(args) -> ExperimentConfig:
    config = load_config(args.config)
    overrides = {}
    if args.mock:
        overrides["mock"] = True
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.output:
        overrides["output"] = str(Path(args.output).resolve())
    return config.with_overrides(**overrides) if overrides else config


def _missing_secrets(config: ExperimentConfig) -> list[str]:
    if config.mock:
        return []
    return sorted({e.api_key_env for e in config.endpoints
                   if e.api_key_env and not os.environ.get(e.api_key_env)})


def print_table(report, stream) -> int:
    rows = report.per_combination
    header = ("combination", "approach", "mean_rank", "mean_elo", "mean_cost", "mean_time")
    lines = [header]
    for s in rows:
        lines.append((
            s.combination, s.approach,
            "n/a" if s.mean_rank is None else f"{s.mean_rank:.2f}",
            "n/a" if s.mean_elo is None else f"{s.mean_elo:.1f}",
            "n/a" if s.mean_cost is None else f"{s.mean_cost:.6f}",
            "n/a" if s.mean_time is None else f"{s.mean_time:.2f}",
        ))
    widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
    for row in lines:
        print("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip(), file=stream)
    return len(rows)


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out, err = sys.stdout, sys.stderr
    try:
        config = _load(args)
        if args.command == "run":
            missing = _missing_secrets(config)
            if missing:
                print(f"error: missing environment variables {', '.join(missing)}", file=err)
                return EXIT_CONFIG
        experiment = Experiment(config, replay=args.resume, console=err)
    except (ConfigError, LedgerError, OSError) as exc:
        print(f"error: {exc}", file=err)
        return EXIT_CONFIG

    if args.command == "ingest":
        try:
            manifest = load_manifest(config.path(config.snippets))
        except (OSError, ValueError) as exc:
            print(f"error: cannot read manifest: {exc}", file=err)
            return EXIT_CONFIG
        stored = experiment.ingest(manifest)
        for message in manifest.duplicates:
            print(f"warning: {message}", file=err)
        for message in manifest.errors:
            print(f"error: {message}", file=err)
        print(f"ingest: {len(manifest.snippets)} valid entries, {stored} newly stored, "
              f"{len(manifest.duplicates)} duplicates, {len(manifest.errors)} rejected", file=out)
        return EXIT_PARTIAL if manifest.errors else EXIT_OK

    if args.command == "run":
        if not experiment.ledger.snippets:
            print("error: no snippets in the ledger; run `moaopt ingest` first", file=err)
            return EXIT_CONFIG
        experiment.run()
        failed = len(experiment.ledger.failed_units)
        print(f"run: {len(experiment.ledger.completed_units)} units complete, {failed} failed, "
              f"{experiment.gateway.attempted} new model calls", file=out)
        return EXIT_PARTIAL if failed else EXIT_OK

    if args.command == "evaluate":
        summary = experiment.evaluate()
        failed_matches = sum(1 for m in experiment.ledger.matches if m["status"] == "failed")
        print(f"evaluate: {summary.executed} tournaments run, {summary.skipped} unrated, "
              f"{summary.pending} pending, {failed_matches} failed matches", file=out)
        return EXIT_PARTIAL if (summary.pending or failed_matches) else EXIT_OK

    report, paths = experiment.report()
    print_table(report, out)
    print(f"report: wrote {', '.join(sorted(COLUMNS))} to {Path(paths['comparative']).parent}", file=out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
