"""Report generation from the run ledger.

Files written by :func:`emit_reports` (each as ``.csv`` and ``.txt``):

``comparative``  per-combination view, one row per (combination, approach)
``elo_cost``     cross-combination view, one row per (combination, approach)
``scatter``      cross-combination points, one row per (snippet, repetition,
                 combination, approach) of complete snippets only
``savings``      GA (reference) vs MoA (alternative) cost and time percentages
``accounting``   reconciled call totals per ledger group

CSV files start with ``# key: value`` header lines (configuration hash, ELO
parameters, filter counts); read them with ``pandas.read_csv(comment="#")``.
The ``.txt`` twins are fixed-width tables preceded by a column glossary.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from decimal import Decimal
from pathlib import Path

from .arena import CROSS, PER_COMBINATION, cross_group, rank_cross_combination, rank_per_combination
from .domain import Totals, UnitKey, money_str
from .store import RunLedger, reconcile

REFERENCE = "GA"
ALTERNATIVE = "MoA"


def cost_savings(cost_reference, cost_alternative) -> float | None:
    """Percent saved by the alternative; negative means it costs more.

    Returns None when the reference cost is zero (undefined).
    """
    ref, alt = Decimal(str(cost_reference)), Decimal(str(cost_alternative))
    if ref <= 0:
        return None
    return float(Decimal(100) * (ref - alt) / ref)


def time_speedup(time_reference, time_alternative) -> float | None:
    """Percent of wall time saved by the alternative; None if reference is zero."""
    ref, alt = Decimal(str(time_reference)), Decimal(str(time_alternative))
    if ref <= 0:
        return None
    return float(Decimal(100) * (ref - alt) / ref)


@dataclass
class ApproachSummary:
    combination: str
    approach: str
    mean_rank: float | None = None
    mean_elo: float | None = None
    mean_cost: Decimal | None = None
    mean_time: float | None = None
    snippets: int = 0
    repetitions: int = 0
    units: int = 0
    excluded: int = 0
    cost_total: Decimal = Decimal(0)
    latency_total_us: int = 0


@dataclass
class ComparativeReport:
    per_combination: list[ApproachSummary] = field(default_factory=list)
    cross: list[ApproachSummary] = field(default_factory=list)
    scatter: list[dict] = field(default_factory=list)
    savings: list[dict] = field(default_factory=list)
    meta: dict = field(default_factory=dict)


def _cost_time(totals: list[Totals], summary: ApproachSummary) -> None:
    summary.units = len(totals)
    if not totals:
        return
    cost = sum((t.cost for t in totals), Decimal(0))
    latency = sum(t.latency_us for t in totals)
    summary.cost_total = cost
    summary.latency_total_us = latency
    summary.mean_cost = cost / len(totals)
    summary.mean_time = latency / 1e6 / len(totals)


def build_report(ledger: RunLedger, *, combinations: list[str], approaches: dict[str, list[str]],
                 cross_combinations: list[str], repetitions: int, arena: dict) -> ComparativeReport:
    report = ComparativeReport()
    snippets = ledger.snippets
    done = ledger.completed_units

    for cid in combinations:
        standings = rank_per_combination(ledger, cid, approaches[cid])
        for approach in approaches[cid]:
            s = standings[approach]
            summary = ApproachSummary(cid, approach, s.mean_rank, s.mean_elo, excluded=s.excluded)
            totals, snippet_ids, reps = [], set(), set()
            for unit_str, variant_id in sorted(done.items()):
                unit = UnitKey.parse(unit_str)
                if unit.combination_id == cid and unit.approach == approach:
                    totals.append(ledger.variant(variant_id).totals)
                    snippet_ids.add(unit.snippet_id)
                    reps.add(unit.repetition)
            _cost_time(totals, summary)
            summary.snippets, summary.repetitions = len(snippet_ids), len(reps)
            report.per_combination.append(summary)

    cross_included: set[str] = set()
    if cross_combinations:
        group = cross_group(cross_combinations)
        tournaments = [t for t in ledger.tournaments if t["mode"] == CROSS and t["group"] == group]
        skipped = [t for t in ledger.skipped_tournaments if t["mode"] == CROSS and t["group"] == group]
        cross_included = {t["snippet_id"] for t in tournaments}
        excluded = {t["snippet_id"] for t in skipped} - cross_included
        standings = rank_cross_combination(ledger, cross_combinations)
        for t in sorted(tournaments, key=lambda t: t["key"]):
            for entry in sorted(t["standings"], key=lambda e: e["subject"]):
                approach, combination = entry["subject"].split("@", 1)
                variant = ledger.variant(entry["variant_id"])
                report.scatter.append({
                    "snippet_id": t["snippet_id"],
                    "repetition": t["repetition"],
                    "approach": approach,
                    "combination": combination,
                    "elo": entry["rating"],
                    "time": variant.totals.latency_us,
                    "cost": variant.totals.cost,
                })
        for cid in cross_combinations:
            for approach in ("MoA", "GA"):
                s = standings.get((approach, cid))
                if s is None:
                    continue
                rows = [r for r in report.scatter if r["combination"] == cid and r["approach"] == approach]
                summary = ApproachSummary(cid, approach, s.mean_rank, s.mean_elo,
                                          excluded=len(excluded))
                _cost_time([Totals(1, 0, 0, r["cost"], r["time"]) for r in rows], summary)
                summary.snippets = len({r["snippet_id"] for r in rows})
                summary.repetitions = len({r["repetition"] for r in rows})
                report.cross.append(summary)
        report.meta["cross_snippets_included"] = len(cross_included)
        report.meta["cross_snippets_excluded"] = len(excluded)

    for mode, rows in ((PER_COMBINATION, report.per_combination), (CROSS, report.cross)):
        by_key = {(r.combination, r.approach): r for r in rows}
        for cid in dict.fromkeys(r.combination for r in rows):
            ref, alt = by_key.get((cid, REFERENCE)), by_key.get((cid, ALTERNATIVE))
            if not ref or not alt or ref.mean_cost is None or alt.mean_cost is None:
                continue
            report.savings.append({
                "mode": mode,
                "combination": cid,
                "ga_cost": ref.mean_cost,
                "moa_cost": alt.mean_cost,
                "cost_savings_pct": cost_savings(ref.mean_cost, alt.mean_cost),
                "ga_time": ref.mean_time,
                "moa_time": alt.mean_time,
                "time_speedup_pct": time_speedup(ref.mean_time, alt.mean_time),
            })

    rated = [t for t in ledger.tournaments if t["mode"] == PER_COMBINATION]
    unrated = [t for t in ledger.skipped_tournaments if t["mode"] == PER_COMBINATION]
    report.meta.update({
        "snippets_ingested": len(snippets),
        "repetitions": repetitions,
        "per_combination_pools_rated": len(rated),
        "per_combination_pools_unrated": len(unrated),
        "units_complete": len(done),
        "units_failed": len(ledger.failed_units),
        **arena,
    })
    return report


# -- rendering -------------------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, Decimal):
        return f"{value:.10f}"
    if isinstance(value, float):
        if math.isnan(value):
            return "n/a"
        return f"{value:.6f}"
    return str(value)


def _csv_text(header: list[str], rows: list[list], meta: dict) -> str:
    buf = io.StringIO()
    for key in sorted(meta):
        buf.write(f"# {key}: {meta[key]}\n")
    if not rows:
        buf.write("# no data\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def _txt_text(title: str, columns: list[tuple[str, str]], rows: list[list], meta: dict) -> str:
    lines = [title, "=" * len(title)]
    lines += [f"{key}: {meta[key]}" for key in sorted(meta)]
    lines.append("")
    lines.append("Columns:")
    lines += [f"  {name:<18} {doc}" for name, doc in columns]
    lines.append("")
    if not rows:
        lines.append("(no data)")
        return "\n".join(lines) + "\n"
    header = [name for name, _ in columns]
    widths = [max(len(h), *(len(str(r[i])) for r in rows)) for i, h in enumerate(header)]
    lines.append("  ".join(h.ljust(w) for h, w in zip(header, widths)).rstrip())
    lines.append("  ".join("-" * w for w in widths))
    for row in rows:
        lines.append("  ".join(str(c).ljust(w) for c, w in zip(row, widths)).rstrip())
    return "\n".join(lines) + "\n"


COLUMNS = {
    "comparative": [
        ("combination", "combination id"),
        ("approach", "MoA, GA or Individual:<model>"),
        ("mean_rank", "mean per-pool rank (1 = best, ties averaged)"),
        ("mean_elo", "mean final ELO rating over rated pools"),
        ("mean_cost", "mean generation cost per unit (USD, judge excluded)"),
        ("mean_time", "mean summed call latency per unit (s)"),
        ("snippets", "distinct snippets with a completed unit"),
        ("repetitions", "distinct repetitions with a completed unit"),
        ("units", "completed units"),
        ("excluded", "rated pools lacking this approach"),
    ],
    "elo_cost": [
        ("combination", "combination id"),
        ("approach", "MoA or GA"),
        ("mean_elo", "mean ELO in complete cross-combination pools"),
        ("mean_rank", "mean rank within those pools"),
        ("mean_cost", "mean generation cost per unit (USD, judge excluded)"),
        ("mean_time", "mean summed call latency per unit (s)"),
        ("snippets", "complete snippets included"),
        ("repetitions", "repetitions included"),
        ("units", "units included"),
        ("excluded", "snippets excluded by the complete-set filter"),
    ],
    "scatter": [
        ("snippet_id", "snippet id"),
        ("repetition", "repetition index"),
        ("approach", "MoA or GA"),
        ("combination", "combination id"),
        ("elo", "final ELO in the snippet's cross-combination pool"),
        ("time", "summed call latency of the unit (s)"),
        ("cost", "exact generation cost of the unit (USD)"),
    ],
    "savings": [
        ("mode", "per_combination or cross"),
        ("combination", "combination id"),
        ("ga_cost", "GA mean cost per unit (reference)"),
        ("moa_cost", "MoA mean cost per unit (alternative)"),
        ("cost_savings_pct", "100 * (ga_cost - moa_cost) / ga_cost"),
        ("ga_time", "GA mean time per unit (reference, s)"),
        ("moa_time", "MoA mean time per unit (alternative, s)"),
        ("time_speedup_pct", "100 * (ga_time - moa_time) / ga_time"),
    ],
    "accounting": [
        ("phase", "generation or evaluation"),
        ("group", "approach (generation) or tournament mode (evaluation)"),
        ("combination", "combination id or cross group"),
        ("repetition", "repetition index"),
        ("calls", "call records"),
        ("prompt_tokens", "summed prompt tokens"),
        ("completion_tokens", "summed completion tokens"),
        ("cost", "exact summed cost (USD)"),
        ("wall_time", "summed call latency (s)"),
    ],
}


def _summary_row(s: ApproachSummary, cross: bool) -> list:
    if cross:
        return [s.combination, s.approach, _fmt(s.mean_elo), _fmt(s.mean_rank), _fmt(s.mean_cost),
                _fmt(s.mean_time), s.snippets, s.repetitions, s.units, s.excluded]
    return [s.combination, s.approach, _fmt(s.mean_rank), _fmt(s.mean_elo), _fmt(s.mean_cost),
            _fmt(s.mean_time), s.snippets, s.repetitions, s.units, s.excluded]


def _has_units(summary) -> bool:
    # a row with nothing rated and nothing excluded means no data reached this approach yet
    return bool(summary.units or summary.excluded)


def report_tables(report: ComparativeReport, ledger: RunLedger) -> dict[str, list[list]]:
    accounting = reconcile(ledger)
    acc_rows = [
        [phase, group, combination, rep, t.calls, t.prompt_tokens, t.completion_tokens,
         money_str(t.cost), f"{t.latency_us / 1e6:.6f}"]
        for (phase, group, combination, rep), t in sorted(accounting.rows.items())
    ]
    total = accounting.total
    if acc_rows:
        acc_rows.append(["total", "*", "*", "*", total.calls, total.prompt_tokens,
                         total.completion_tokens, money_str(total.cost), f"{total.latency_us / 1e6:.6f}"])
    return {
        "comparative": [_summary_row(s, False) for s in report.per_combination if _has_units(s)],
        "elo_cost": [_summary_row(s, True) for s in report.cross if _has_units(s)],
        "scatter": [
            [r["snippet_id"], r["repetition"], r["approach"], r["combination"], _fmt(r["elo"]),
             f"{r['time'] / 1e6:.6f}", money_str(r["cost"])]
            for r in report.scatter
        ],
        "savings": [
            [r["mode"], r["combination"], _fmt(r["ga_cost"]), _fmt(r["moa_cost"]),
             _fmt(r["cost_savings_pct"]), _fmt(r["ga_time"]), _fmt(r["moa_time"]),
             _fmt(r["time_speedup_pct"])]
            for r in report.savings
        ],
        "accounting": acc_rows,
    }


def emit_reports(ledger: RunLedger, out_dir: str | Path, report: ComparativeReport,
                 meta: dict) -> dict[str, Path]:
    """Write every report as CSV and text; returns the CSV paths by name."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    header = {**meta, **report.meta,
              "savings_baseline": f"reference={REFERENCE}, alternative={ALTERNATIVE}",
              "cost_scope": "generation calls only; judge calls reported under accounting/evaluation"}
    written = {}
    for name, rows in report_tables(report, ledger).items():
        columns = COLUMNS[name]
        csv_path = out_dir / f"{name}.csv"
        csv_path.write_text(_csv_text([c for c, _ in columns], rows, header), encoding="utf-8")
        (out_dir / f"{name}.txt").write_text(_txt_text(name, columns, rows, header), encoding="utf-8")
        written[name] = csv_path
    return written


def read_report_csv(path: str | Path) -> list[dict]:
    lines = [l for l in Path(path).read_text(encoding="utf-8").splitlines() if not l.startswith("#")]
    return list(csv.DictReader(lines))
