"""Append-only run ledger.

Layout of a ledger directory::

    events.jsonl         one JSON object per line:
                         {"seq": int, "type": str, "data": {...}, "ts": float}
    blobs/<sha256>.txt   content-addressed UTF-8 texts (variants, responses)

``seq`` starts at 1 and increases by one per event. ``ts`` is wall-clock time
and is the only field excluded from :meth:`RunLedger.content_hash`. Event
types and their ``data`` payloads are listed in ``EVENT_TYPES``; the first
event of every ledger is ``run_started`` carrying ``ledger_version``.
"""

from __future__ import annotations

import json
import os
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

from .domain import (
    ApproachTag,
    CallRecord,
    CodeSnippet,
    OptimizationVariant,
    Totals,
    UnitKey,
    canonical_json,
    content_sha,
    sha256_hex,
)

LEDGER_VERSION = 1

EVENT_TYPES = (
    "run_started",          # config_hash, ledger_version, templates
    "snippet",              # CodeSnippet fields
    "call",                 # CallRecord fields
    "variant",              # variant fields, content_sha instead of content
    "unit_complete",        # unit, variant_id
    "unit_failed",          # unit, reason
    "match",                # MatchRecord fields
    "tournament_complete",  # key, mode, combination_id, snippet_id, repetition, ratings, matches
    "tournament_skipped",   # key, mode, ..., reason
)


class LedgerError(RuntimeError):
    """Malformed event, dangling reference or storage failure."""


@dataclass
class _Index:
    snippets: dict[str, CodeSnippet] = field(default_factory=dict)
    calls: dict[str, CallRecord] = field(default_factory=dict)
    calls_by_key: dict[str, list[CallRecord]] = field(default_factory=lambda: defaultdict(list))
    variants: dict[str, dict] = field(default_factory=dict)
    units_done: dict[str, str] = field(default_factory=dict)
    units_failed: dict[str, str] = field(default_factory=dict)
    matches: dict[str, dict] = field(default_factory=dict)
    tournaments: dict[str, dict] = field(default_factory=dict)
    tournaments_skipped: dict[str, dict] = field(default_factory=dict)


class RunLedger:
    """Single-writer, append-only event log with in-memory indexes."""

    def __init__(self, directory: str | Path, *, config_hash: str | None = None,
                 meta: dict | None = None, fsync: bool = True) -> None:
        self.directory = Path(directory)
        self.blob_dir = self.directory / "blobs"
        self.path = self.directory / "events.jsonl"
        self.fsync = fsync
        self._lock = threading.Lock()
        self._events: list[dict] = []
        self._idx = _Index()
        self.directory.mkdir(parents=True, exist_ok=True)
        self.blob_dir.mkdir(exist_ok=True)
        if self.path.exists():
            self._load()
        if not self._events:
            self.append("run_started", {
                "config_hash": config_hash,
                "ledger_version": LEDGER_VERSION,
                **(meta or {}),
            })
        elif config_hash is not None and self.config_hash not in (None, config_hash):
            raise LedgerError(
                f"ledger at {self.directory} belongs to config {self.config_hash}, not {config_hash}"
            )

    # -- loading ---------------------------------------------------------

    def _load(self) -> None:
        raw = self.path.read_bytes()
        good_end = 0
        for line in raw.splitlines(keepends=True):
            if not line.endswith(b"\n"):
                break
            try:
                event = json.loads(line)
            except json.JSONDecodeError:
                break
            self._index(event)
            self._events.append(event)
            good_end += len(line)
        if good_end != len(raw):
            # torn tail from a crash mid-write; it was never acknowledged
            with open(self.path, "r+b") as fh:
                fh.truncate(good_end)

    # -- properties ------------------------------------------------------

    @property
    def config_hash(self) -> str | None:
        return self._events[0]["data"].get("config_hash") if self._events else None

    @property
    def header(self) -> dict:
        return self._events[0]["data"]

    @property
    def events(self) -> list[dict]:
        return list(self._events)

    @property
    def last_seq(self) -> int:
        return self._events[-1]["seq"] if self._events else 0

    def content_hash(self) -> str:
        """Digest of the event log ignoring timestamps."""
        stripped = [{k: v for k, v in e.items() if k != "ts"} for e in self._events]
        return sha256_hex(canonical_json(stripped))

    # -- blobs -----------------------------------------------------------

    def put_blob(self, text: str) -> str:
        sha = content_sha(text)
        target = self.blob_dir / f"{sha}.txt"
        if not target.exists():
            # per-thread temp name: concurrent writers of the same blob must not collide
            tmp = self.blob_dir / f"{sha}.{os.getpid()}.{threading.get_ident()}.tmp"
            with open(tmp, "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
                fh.flush()
                if self.fsync:
                    os.fsync(fh.fileno())
            os.replace(tmp, target)
        return sha

    def get_blob(self, sha: str) -> str:
        with open(self.blob_dir / f"{sha}.txt", encoding="utf-8", newline="") as fh:
            return fh.read()

    def has_blob(self, sha: str) -> bool:
        return (self.blob_dir / f"{sha}.txt").exists()

    # -- appending -------------------------------------------------------

    def append(self, event_type: str, data: dict) -> int:
        if event_type not in EVENT_TYPES:
            raise LedgerError(f"unknown event type {event_type!r}")
        with self._lock:
            self._validate(event_type, data)
            event = {"seq": self.last_seq + 1, "type": event_type, "data": data, "ts": time.time()}
            line = json.dumps(event, sort_keys=True, ensure_ascii=False) + "\n"
            try:
                with open(self.path, "a", encoding="utf-8", newline="") as fh:
                    fh.write(line)
                    fh.flush()
                    if self.fsync:
                        os.fsync(fh.fileno())
            except OSError as exc:
                raise LedgerError(f"ledger write failed: {exc}") from exc
            self._index(event)
            self._events.append(event)
            return event["seq"]

    def _validate(self, event_type: str, data: dict) -> None:
        idx = self._idx
        if event_type == "call":
            if data["id"] in idx.calls:
                raise LedgerError(f"duplicate call id {data['id']}")
            CallRecord.from_dict(data)
        elif event_type == "variant":
            missing = [c for c in data["trace"] if c not in idx.calls]
            if missing:
                raise LedgerError(f"variant references unknown calls {missing[:3]}")
            if not self.has_blob(data["content_sha"]):
                raise LedgerError("variant content blob missing")
            expected = Totals.of([idx.calls[c] for c in data["trace"]])
            if Totals.from_dict(data["totals"]) != expected:
                raise LedgerError(f"variant {data['id']} totals do not match its trace")
        elif event_type == "unit_complete":
            variant = idx.variants.get(data["variant_id"])
            if variant is None:
                raise LedgerError(f"unit_complete references unknown variant {data['variant_id']}")
            if variant["unit"] != data["unit"]:
                raise LedgerError("unit_complete unit does not match its variant")
        elif event_type == "match":
            for ref in (data["variant_a"], data["variant_b"]):
                if ref not in idx.variants:
                    raise LedgerError(f"match references unknown variant {ref}")
            missing = [c for c in data["judge_calls"] if c not in idx.calls]
            if missing:
                raise LedgerError(f"match references unknown calls {missing[:3]}")
        elif event_type == "tournament_complete":
            missing = [m for m in data["matches"] if m not in idx.matches]
            if missing:
                raise LedgerError(f"tournament references unknown matches {missing[:3]}")

    def _index(self, event: dict) -> None:
        idx, data, kind = self._idx, event["data"], event["type"]
        if kind == "snippet":
            idx.snippets[data["id"]] = CodeSnippet.from_dict(data)
        elif kind == "call":
            record = CallRecord.from_dict(data)
            idx.calls[record.id] = record
            idx.calls_by_key[record.request_key].append(record)
        elif kind == "variant":
            idx.variants[data["id"]] = data
        elif kind == "unit_complete":
            idx.units_done[data["unit"]] = data["variant_id"]
        elif kind == "unit_failed":
            idx.units_failed[data["unit"]] = data["reason"]
        elif kind == "match":
            idx.matches[data["id"]] = data
        elif kind == "tournament_complete":
            idx.tournaments[data["key"]] = data
        elif kind == "tournament_skipped":
            idx.tournaments_skipped[data["key"]] = data

    # -- typed helpers ---------------------------------------------------

    def add_snippet(self, snippet: CodeSnippet) -> bool:
        """Persist a snippet; returns False if it was already stored."""
        if snippet.id in self._idx.snippets:
            return False
        self.append("snippet", snippet.to_dict())
        return True

    def add_call(self, record: CallRecord) -> int:
        return self.append("call", record.to_dict())

    def add_variant(self, variant: OptimizationVariant) -> int:
        sha = self.put_blob(variant.content)
        return self.append("variant", {
            "id": variant.id,
            "unit": str(variant.unit),
            "snippet_id": variant.snippet_id,
            "approach": str(variant.approach),
            "combination_id": variant.combination_id,
            "repetition": variant.repetition_index,
            "content_sha": sha,
            "trace": list(variant.trace),
            "totals": variant.totals.to_dict(),
            "details": variant.details,
        })

    def complete_unit(self, unit: UnitKey, variant_id: str) -> int:
        return self.append("unit_complete", {"unit": str(unit), "variant_id": variant_id})

    def fail_unit(self, unit: UnitKey, reason: str) -> int:
        return self.append("unit_failed", {"unit": str(unit), "reason": reason})

    # -- queries ---------------------------------------------------------

    @property
    def snippets(self) -> list[CodeSnippet]:
        return list(self._idx.snippets.values())

    def snippet(self, snippet_id: str) -> CodeSnippet:
        return self._idx.snippets[snippet_id]

    @property
    def calls(self) -> list[CallRecord]:
        return list(self._idx.calls.values())

    def call(self, call_id: str) -> CallRecord:
        return self._idx.calls[call_id]

    def calls_for_key(self, request_key: str) -> list[CallRecord]:
        return list(self._idx.calls_by_key.get(request_key, ()))

    def unit_status(self, unit: UnitKey) -> str | None:
        key = str(unit)
        if key in self._idx.units_done:
            return "complete"
        if key in self._idx.units_failed:
            return "failed"
        return None

    @property
    def completed_units(self) -> dict[str, str]:
        return dict(self._idx.units_done)

    @property
    def failed_units(self) -> dict[str, str]:
        return dict(self._idx.units_failed)

    def variant(self, variant_id: str) -> OptimizationVariant:
        data = self._idx.variants[variant_id]
        return OptimizationVariant(
            snippet_id=data["snippet_id"],
            approach=ApproachTag.parse(data["approach"]),
            combination_id=data["combination_id"],
            repetition_index=data["repetition"],
            content=self.get_blob(data["content_sha"]),
            trace=tuple(data["trace"]),
            totals=Totals.from_dict(data["totals"]),
            details=data.get("details", {}),
            id=data["id"],
        )

    def completed_variant(self, unit: UnitKey) -> OptimizationVariant | None:
        variant_id = self._idx.units_done.get(str(unit))
        return self.variant(variant_id) if variant_id else None

    def tournament(self, key: str) -> dict | None:
        return self._idx.tournaments.get(key)

    def tournament_done(self, key: str) -> bool:
        return key in self._idx.tournaments or key in self._idx.tournaments_skipped

    @property
    def tournaments(self) -> list[dict]:
        return list(self._idx.tournaments.values())

    @property
    def skipped_tournaments(self) -> list[dict]:
        return list(self._idx.tournaments_skipped.values())

    def match(self, match_id: str) -> dict:
        return self._idx.matches[match_id]

    @property
    def matches(self) -> list[dict]:
        return list(self._idx.matches.values())


# -- accounting -------------------------------------------------------------

GENERATION = "generation"
EVALUATION = "evaluation"


@dataclass
class AccountingReport:
    """Call totals grouped by (phase, approach-or-mode, combination, repetition)."""

    rows: dict[tuple[str, str, str, int], Totals] = field(default_factory=dict)

    @property
    def total(self) -> Totals:
        out = Totals()
        for key in sorted(self.rows):
            out = out + self.rows[key]
        return out

    def phase_total(self, phase: str) -> Totals:
        out = Totals()
        for key in sorted(self.rows):
            if key[0] == phase:
                out = out + self.rows[key]
        return out


def _group_key(unit: str) -> tuple[str, str, str, int]:
    if unit.startswith("tournament:"):
        # tournament:<mode>:<combination>:<repetition>:<snippet>
        _, mode, combination, rep, _snippet = unit.split(":", 4)
        return (EVALUATION, mode, combination, int(rep))
    key = UnitKey.parse(unit)
    return (GENERATION, key.approach, key.combination_id, key.repetition)


def reconcile(ledger: RunLedger) -> AccountingReport:
    """Sum every call record in the ledger by experimental group."""
    report = AccountingReport()
    for call in ledger.calls:
        key = _group_key(call.unit)
        report.rows[key] = report.rows.get(key, Totals()) + Totals.of([call])
    return report


def unit_totals(ledger: RunLedger) -> dict[str, Totals]:
    """Totals of all calls per generation unit string."""
    out: dict[str, Totals] = {}
    for call in ledger.calls:
        if not call.unit.startswith("tournament:"):
            out[call.unit] = out.get(call.unit, Totals()) + Totals.of([call])
    return out


def money_sum(values) -> Decimal:
    total = Decimal(0)
    for value in values:
        total += value
    return total
