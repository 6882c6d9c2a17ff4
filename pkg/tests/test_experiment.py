from __future__ import annotations

from collections import Counter

from builders import base_config, config_from, run_pipeline
from moaopt.domain import UnitKey
from moaopt.experiment import Experiment
from moaopt.gateway import MockBackend

NAMES = ("vendor-alpha", "vendor-beta", "vendor-gamma", "vendor-omega", "vendor-judge")


class Recorder:
    def __init__(self, inner) -> None:
        self.inner = inner
        self.requests = []

    def send(self, agent, request):
        self.requests.append(request)
        return self.inner.send(agent, request)


def _renamed(root, **overrides):
    data = base_config(root, **overrides)
    rename = dict(zip(("p1", "p2", "p3", "agg", "judge"), NAMES))
    for agent in data["agents"]:
        agent["name"] = rename[agent["name"]]
    for profile in data["mock"]["profiles"]:
        profile["agent"] = rename[profile["agent"]]
    data["combinations"] = [{"id": "COMBX", "proposers": list(NAMES[:3]), "aggregator": NAMES[3]}]
    data["judge"] = NAMES[4]
    return config_from(root, data)


def test_prompts_never_name_models_approaches_or_combinations(tmp_path):
    config = _renamed(tmp_path)
    recorder = Recorder(MockBackend({p.agent_name: p for p in config.mock_profiles}))
    run_pipeline(config, backend=recorder)
    judge = [r for r in recorder.requests if r.kind == "judge"]
    assert judge
    for request in recorder.requests:
        assert not any(name in request.prompt_text for name in NAMES)
        assert "COMBX" not in request.prompt_text
    for request in judge:
        assert "MoA" not in request.prompt_text and "Individual" not in request.prompt_text


def test_completed_units_have_their_expected_events(tmp_path):
    config = config_from(tmp_path, base_config(tmp_path, snippets=2))
    experiment = run_pipeline(config, report=False)
    ledger = experiment.ledger
    by_unit = Counter(c.unit for c in ledger.calls if c.ok)
    variants = Counter(e["data"]["unit"] for e in ledger.events if e["type"] == "variant")
    for unit, variant_id in ledger.completed_units.items():
        approach = UnitKey.parse(unit).approach
        if approach == "MoA":
            assert by_unit[unit] == 3 * 2 + 1
        elif approach.startswith("Individual:"):
            assert by_unit[unit] == 1
        assert variants[unit] == 1
        assert ledger.variant(variant_id).totals.calls == sum(1 for c in ledger.calls if c.unit == unit)
    assert experiment.gateway.attempted == len(ledger.calls)


def test_each_individual_profile_yields_a_distinct_variant(tmp_path):
    config = config_from(tmp_path, base_config(tmp_path, snippets=1, approaches=["Individual"]))
    ledger = run_pipeline(config, report=False).ledger
    ids = list(ledger.completed_units.values())
    assert len(ids) == 3 == len(set(ids))
    assert len({ledger.variant(i).content for i in ids}) == 3


def test_mock_mode_ignores_declared_secrets(tmp_path, monkeypatch):
    monkeypatch.delenv("NEVER_SET_KEY", raising=False)
    reads = []
    real_get = __import__("os").environ.get

    def spy(key, default=None):
        reads.append(key)
        return real_get(key, default)

    data = base_config(tmp_path)
    data["endpoints"] = [{"id": "ep", "base_url": "https://llm.invalid", "model": "m",
                          "api_key_env": "NEVER_SET_KEY"}]
    config = config_from(tmp_path, data)
    monkeypatch.setattr("os.environ.get", spy)
    experiment = run_pipeline(config)
    assert not experiment.ledger.failed_units
    assert "NEVER_SET_KEY" not in reads


def test_empty_experiment_reports_say_no_data(tmp_path):
    config = config_from(tmp_path, base_config(tmp_path))
    experiment = Experiment(config)
    experiment.run()
    experiment.evaluate()
    _, paths = experiment.report()
    for path in paths.values():
        assert "# no data" in path.read_text()
        assert "(no data)" in path.with_suffix(".txt").read_text()


def test_failed_units_never_appear_in_report_pools(tmp_path):
    data = base_config(tmp_path, snippets=2)
    data["mock"]["profiles"][0]["failure_rate"] = 1.0
    config = config_from(tmp_path, data)
    experiment = run_pipeline(config)
    failed = set(experiment.ledger.failed_units)
    assert any("Individual:p1" in u for u in failed)
    for t in experiment.ledger.tournaments:
        subjects = {s["subject"] for s in t["standings"]}
        assert "Individual:p1" not in subjects
    report = experiment.build_report()
    p1 = next(s for s in report.per_combination if s.approach == "Individual:p1")
    assert p1.mean_rank is None and p1.units == 0 and p1.excluded == 2


def test_parallel_workers_produce_the_same_reports(tmp_path):
    outputs = []
    for workers in (1, 4):
        config = config_from(tmp_path, base_config(tmp_path, snippets=3, workers=workers,
                                                   output=f"w{workers}"))
        run_pipeline(config)
        # workers is part of the config hash; everything else must match
        outputs.append({p.name: [l for l in p.read_text().splitlines() if "config_hash" not in l]
                        for p in config.report_dir.iterdir()})
    assert outputs[0] == outputs[1]
