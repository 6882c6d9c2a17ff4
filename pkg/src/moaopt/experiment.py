"""Experiment lifecycle: ingest, run, evaluate, report."""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, TextIO

from . import analytics
from .arena import (
    CROSS,
    PER_COMBINATION,
    Contestant,
    cross_group,
    run_tournament,
    tournament_key,
)
from .config import ExperimentConfig
from .domain import ApproachTag, CodeSnippet, Combination, UnitKey, sha256_hex
from .ga import optimize_ga
from .gateway import Backend, Gateway, HttpBackend, MockBackend
from .individual import optimize_individual
from .manifest import ManifestResult
from .moa import MoAPlan, optimize_moa
from .prompts import PromptSet, load_fragments
from .store import RunLedger
from .unit import EngineFailure, UnitRun, derive_seed

logger = logging.getLogger(__name__)


@dataclass
class PhaseSummary:
    executed: int = 0
    skipped: int = 0
    failed: int = 0
    pending: int = 0
    failures: list[str] = field(default_factory=list)


class Experiment:
    def __init__(self, config: ExperimentConfig, *, backend: Backend | None = None,
                 replay: bool = False, sleep: Callable[[float], None] = time.sleep,
                 console: TextIO | None = None) -> None:
        self.config = config
        self.console = console
        self.prompts = PromptSet(config.path(config.templates))
        self.fragments = load_fragments(config.path(config.fragments))
        fragment_hash = sha256_hex(*(f"{f.id}={f.text}" for f in self.fragments))
        self.experiment_hash = sha256_hex(
            config.config_hash(), *(f"{k}={v}" for k, v in self.prompts.hashes.items()), fragment_hash,
        )
        self.ledger = RunLedger(
            config.ledger_dir,
            config_hash=self.experiment_hash,
            meta={"settings_hash": config.config_hash(), "templates": self.prompts.hashes,
                  "fragments": fragment_hash},
            fsync=config.fsync,
        )
        if backend is None:
            if config.mock:
                backend = MockBackend({p.agent_name: p for p in config.mock_profiles})
            else:
                backend = HttpBackend({e.id: e for e in config.endpoints})
        self.gateway = Gateway(
            config.agent_map, backend, self.ledger, retry=config.retry,
            concurrency={e.id: e.max_concurrency for e in config.endpoints},
            replay=replay, sleep=sleep,
        )

    def _say(self, message: str) -> None:
        if self.console is not None:
            print(message, file=self.console, flush=True)

    # -- ingest -----------------------------------------------------------------

    def ingest(self, manifest: ManifestResult) -> int:
        stored = 0
        for snippet in manifest.snippets:
            if self.ledger.add_snippet(snippet):
                stored += 1
        return stored

    # -- run --------------------------------------------------------------------

    def units(self) -> list[tuple[Combination, CodeSnippet, UnitKey]]:
        out = []
        for combination in self.config.combinations:
            for snippet in self.ledger.snippets:
                for rep in range(1, self.config.repetitions + 1):
                    for approach in self.config.approach_strings(combination):
                        out.append((combination, snippet, UnitKey(snippet.id, approach, combination.id, rep)))
        return out

    def execute_unit(self, combination: Combination, snippet: CodeSnippet, unit: UnitKey) -> str | None:
        """Run one unit and ledger its outcome; returns a failure reason or None."""
        seed = derive_seed(self.config.seed, str(unit))
        approach = ApproachTag.parse(unit.approach)
        try:
            if approach.kind.value == "MoA":
                plan = MoAPlan(combination.id, combination.proposers, combination.aggregator,
                               self.config.moa_layers)
                variant, _ = optimize_moa(snippet, plan, unit.repetition, seed,
                                          gateway=self.gateway, prompts=self.prompts)
            elif approach.kind.value == "GA":
                variant = optimize_ga(snippet, combination, self.config.ga, unit.repetition, seed,
                                      gateway=self.gateway, prompts=self.prompts,
                                      fragments=self.fragments, judge=self.config.judge).variant
            else:
                variant = optimize_individual(snippet, approach.model_name, combination.id,
                                              unit.repetition, seed, gateway=self.gateway,
                                              prompts=self.prompts)
        except EngineFailure as exc:
            self.ledger.fail_unit(unit, exc.reason)
            return exc.reason
        self.ledger.add_variant(variant)
        self.ledger.complete_unit(unit, variant.id)
        return None

    def run(self) -> PhaseSummary:
        summary = PhaseSummary()
        todo = []
        for combination, snippet, unit in self.units():
            if self.ledger.unit_status(unit) is not None:
                summary.skipped += 1
            else:
                todo.append((combination, snippet, unit))
        self._say(f"run: {len(todo)} units to execute, {summary.skipped} already done")

        def one(job):
            return job[2], self.execute_unit(*job)

        if self.config.workers > 1:
            with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
                results = pool.map(one, todo)
                self._collect(results, summary, len(todo))
        else:
            self._collect(map(one, todo), summary, len(todo))
        self._say(f"run: executed {summary.executed}, failed {summary.failed}, skipped {summary.skipped}")
        return summary

    def _collect(self, results, summary: PhaseSummary, total: int) -> None:
        for done, (unit, reason) in enumerate(results, start=1):
            summary.executed += 1
            if reason is not None:
                summary.failed += 1
                summary.failures.append(f"{unit}: {reason}")
                self._say(f"  FAILED {unit}: {reason}")
            if done % 25 == 0 or done == total:
                self._say(f"  progress {done}/{total} (failures {summary.failed})")

    # -- evaluate -----------------------------------------------------------------

    def _tournament(self, key: str, mode: str, group: str, snippet: CodeSnippet, repetition: int,
                    pool: dict[str, str], summary: PhaseSummary) -> None:
        base = {"key": key, "mode": mode, "group": group, "snippet_id": snippet.id,
                "repetition": repetition}
        if len(pool) < 2:
            self.ledger.append("tournament_skipped", {**base, "reason": "fewer_than_2_variants",
                                                      "subjects": sorted(pool)})
            summary.skipped += 1
            return
        variants = {subject: self.ledger.variant(vid) for subject, vid in pool.items()}
        contestants = [Contestant(v.id, v.content) for v in variants.values()]
        run = UnitRun(self.gateway, key)
        arena = self.config.arena
        result = run_tournament(
            snippet, contestants, self.config.judge, run=run, prompts=self.prompts,
            k=arena.k_factor, rounds=arena.rounds, seed=derive_seed(self.config.seed, key),
            initial=arena.initial_rating, workers=self.config.workers,
        )
        for match in result.matches:
            self.ledger.append("match", match.to_dict())
        self.ledger.append("tournament_complete", {
            **base,
            "k": arena.k_factor, "rounds": arena.rounds, "initial": arena.initial_rating,
            "standings": [
                {"subject": subject, "variant_id": v.id, "rating": result.ratings[v.id]}
                for subject, v in sorted(variants.items())
            ],
            "matches": [m.id for m in result.matches],
        })
        summary.executed += 1

    def evaluate(self) -> PhaseSummary:
        summary = PhaseSummary()
        combos = self.config.combination_map
        snippets = self.ledger.snippets
        reps = range(1, self.config.repetitions + 1)

        for cid in self.config.evaluated_combinations:
            approaches = self.config.approach_strings(combos[cid])
            for snippet in snippets:
                for rep in reps:
                    key = tournament_key(PER_COMBINATION, cid, rep, snippet.id)
                    if self.ledger.tournament_done(key):
                        continue
                    units = [UnitKey(snippet.id, a, cid, rep) for a in approaches]
                    if any(self.ledger.unit_status(u) is None for u in units):
                        summary.pending += 1
                        continue
                    pool = {u.approach: self.ledger.completed_units[str(u)] for u in units
                            if self.ledger.unit_status(u) == "complete"}
                    self._tournament(key, PER_COMBINATION, cid, snippet, rep, pool, summary)

        cross = list(self.config.cross_combinations)
        ensembles = [a for a in ("MoA", "GA") if a in self.config.approaches]
        if cross and ensembles:
            group = cross_group(cross)
            for snippet in snippets:
                keys = {rep: tournament_key(CROSS, group, rep, snippet.id) for rep in reps}
                if all(self.ledger.tournament_done(k) for k in keys.values()):
                    continue
                units = {(a, cid, rep): UnitKey(snippet.id, a, cid, rep)
                         for a in ensembles for cid in cross for rep in reps}
                if any(self.ledger.unit_status(u) is None for u in units.values()):
                    summary.pending += 1
                    continue
                complete = all(self.ledger.unit_status(u) == "complete" for u in units.values())
                for rep in reps:
                    if self.ledger.tournament_done(keys[rep]):
                        continue
                    if not complete:
                        self.ledger.append("tournament_skipped", {
                            "key": keys[rep], "mode": CROSS, "group": group, "snippet_id": snippet.id,
                            "repetition": rep, "reason": "incomplete_variant_set",
                        })
                        summary.skipped += 1
                        continue
                    pool = {f"{a}@{cid}": self.ledger.completed_units[str(units[(a, cid, rep)])]
                            for a in ensembles for cid in cross}
                    self._tournament(keys[rep], CROSS, group, snippet, rep, pool, summary)
        self._say(f"evaluate: {summary.executed} tournaments, {summary.skipped} unrated, "
                  f"{summary.pending} pending")
        return summary

    # -- report -----------------------------------------------------------------

    def build_report(self) -> analytics.ComparativeReport:
        combos = self.config.combination_map
        return analytics.build_report(
            self.ledger,
            combinations=list(self.config.evaluated_combinations),
            approaches={cid: self.config.approach_strings(combos[cid]) for cid in combos},
            cross_combinations=list(self.config.cross_combinations),
            repetitions=self.config.repetitions,
            arena={"elo_k": self.config.arena.k_factor,
                   "elo_initial": self.config.arena.initial_rating,
                   "elo_rounds": self.config.arena.rounds},
        )

    def report(self, out_dir=None) -> tuple[analytics.ComparativeReport, dict]:
        report = self.build_report()
        paths = analytics.emit_reports(
            self.ledger, out_dir or self.config.report_dir, report,
            {"config_hash": self.experiment_hash},
        )
        return report, paths

