from __future__ import annotations

from decimal import Decimal

import pytest
from hypothesis import given
from hypothesis import strategies as st

from builders import base_config, config_from, run_pipeline
from moaopt.analytics import cost_savings, read_report_csv, time_speedup
from moaopt.domain import UnitKey
from moaopt.store import GENERATION, reconcile


def test_savings_worked_examples():
    assert cost_savings(Decimal("0.09"), Decimal("0.07")) == pytest.approx(22.2222, abs=1e-4)
    assert time_speedup(10, 7) == pytest.approx(30.0, abs=1e-12)


def test_savings_sign_and_undefined_reference():
    assert cost_savings(Decimal("0.05"), Decimal("0.07")) == pytest.approx(-40.0)
    assert cost_savings(0, 1) is None
    assert time_speedup(0.0, 3.0) is None
    assert cost_savings(3, 3) == 0.0


@given(st.decimals("0.0001", "1000", places=4), st.decimals("0", "1000", places=4),
       st.integers(1, 10**6))
def test_savings_are_scale_invariant(ref, alt, factor):
    assert cost_savings(ref * factor, alt * factor) == pytest.approx(cost_savings(ref, alt), rel=1e-12)


@pytest.fixture(scope="module")
def two_combination_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("analytics")
    data = base_config(root, snippets=2, repetitions=2)
    data["combinations"].append({"id": "C2", "proposers": ["p3", "p2", "p1"], "aggregator": "p1"})
    data["evaluation"] = {"cross_combinations": ["C1", "C2"]}
    config = config_from(root, data)
    return config, run_pipeline(config)


def test_per_combination_rows_cover_every_approach(two_combination_run):
    config, experiment = two_combination_run
    rows = read_report_csv(config.report_dir / "comparative.csv")
    assert len(rows) == 2 * 5
    assert {(r["combination"], r["approach"]) for r in rows} == {
        (c.id, a) for c in config.combinations for a in config.approach_strings(c)
    }
    assert all(r["mean_rank"] != "n/a" for r in rows)


def test_reports_regenerate_byte_identically(two_combination_run, tmp_path):
    config, experiment = two_combination_run
    experiment.report(tmp_path)
    for path in config.report_dir.iterdir():
        assert (tmp_path / path.name).read_bytes() == path.read_bytes()


def test_scatter_costs_reconcile_with_ledger(two_combination_run):
    config, experiment = two_combination_run
    scatter = read_report_csv(config.report_dir / "scatter.csv")
    assert len(scatter) == 2 * 2 * 2 * 2
    from_report = sum(Decimal(r["cost"]) for r in scatter)
    rows = reconcile(experiment.ledger).rows
    from_ledger = sum((t.cost for (phase, approach, _, _), t in rows.items()
                       if phase == GENERATION and approach in ("MoA", "GA")), Decimal(0))
    assert from_report == from_ledger


def test_accounting_report_total_matches_call_records(two_combination_run):
    config, experiment = two_combination_run
    rows = read_report_csv(config.report_dir / "accounting.csv")
    total = rows[-1]
    assert total["phase"] == "total"
    calls = experiment.ledger.calls
    assert int(total["calls"]) == len(calls)
    assert Decimal(total["cost"]) == sum((c.cost for c in calls), Decimal(0))
    assert sum(Decimal(r["cost"]) for r in rows[:-1]) == Decimal(total["cost"])


def test_mean_cost_uses_generation_calls_only(two_combination_run):
    config, experiment = two_combination_run
    report = experiment.build_report()
    moa = next(s for s in report.per_combination if s.combination == "C1" and s.approach == "MoA")
    units = [u for u in experiment.ledger.completed_units
             if UnitKey.parse(u).approach == "MoA" and UnitKey.parse(u).combination_id == "C1"]
    generation = sum((c.cost for c in experiment.ledger.calls if c.unit in units), Decimal(0))
    assert moa.mean_cost == generation / len(units)


def test_savings_rows_use_ga_as_reference(two_combination_run):
    config, experiment = two_combination_run
    rows = read_report_csv(config.report_dir / "savings.csv")
    assert {r["mode"] for r in rows} == {"per_combination", "cross"}
    for r in rows:
        expected = 100 * (Decimal(r["ga_cost"]) - Decimal(r["moa_cost"])) / Decimal(r["ga_cost"])
        assert float(r["cost_savings_pct"]) == pytest.approx(float(expected), abs=1e-5)


def test_csv_header_carries_configuration(two_combination_run):
    config, experiment = two_combination_run
    text = (config.report_dir / "elo_cost.csv").read_text()
    assert f"# config_hash: {experiment.experiment_hash}" in text
    assert "# elo_k: 32.0" in text
