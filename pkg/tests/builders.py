"""Small factories shared by the test modules."""

from __future__ import annotations

import copy
from pathlib import Path

import yaml

from moaopt.config import ExperimentConfig
from moaopt.domain import AgentSpec, CodeSnippet, Pricing
from moaopt.experiment import Experiment
from moaopt.gateway import Gateway, MockBackend, MockProfile
from moaopt.manifest import load_manifest
from moaopt.store import RunLedger

SNIPPET_TEMPLATE = """def work_{i}(items):
    out = []
    for x in items:
        if x % {m} == 0:
            out.append(x * {i})
    return out
"""


def snippet(i: int = 0, language: str = "python") -> CodeSnippet:
    return CodeSnippet(f"src/mod_{i}.py", language, SNIPPET_TEMPLATE.format(i=i, m=i % 5 + 2), (1, 6))


def write_corpus(root: Path, count: int) -> Path:
    """Write ``count`` one-function files plus a manifest; returns the manifest path."""
    corpus = root / "corpus"
    corpus.mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        (corpus / f"mod_{i}.py").write_text(SNIPPET_TEMPLATE.format(i=i, m=i % 5 + 2), encoding="utf-8")
        entries.append({"path": f"mod_{i}.py", "start_line": 1, "end_line": 6, "language": "python"})
    manifest = root / "snippets.yaml"
    manifest.write_text(yaml.safe_dump({"root": "corpus", "snippets": entries}), encoding="utf-8")
    return manifest


def agent_entry(name: str, prompt: str = "1.00", completion: str = "2.00") -> dict:
    return {"name": name, "provenance": "commercial", "pricing": {"prompt": prompt, "completion": completion}}


def profile_entry(name: str, quality: float, **extra) -> dict:
    latency = {"fixed": extra.pop("fixed", 0.5), "per_token": extra.pop("per_token", 0.001)}
    return {"agent": name, "quality": quality, "latency": latency, **extra}


def base_config(root: Path, snippets: int = 2, **overrides) -> dict:
    """One combination (p1, p2, p3 -> agg) judged by ``judge``, fully mocked."""
    write_corpus(root, snippets)
    data = {
        "seed": 11,
        "output": "out",
        "snippets": "snippets.yaml",
        "repetitions": 1,
        "agents": [agent_entry(n) for n in ("p1", "p2", "p3", "agg", "judge")],
        "combinations": [{"id": "C1", "proposers": ["p1", "p2", "p3"], "aggregator": "agg"}],
        "judge": "judge",
        "ga": {"population": 3, "max_generations": 2, "stall_generations": 1, "max_fragments": 2},
        "mock": {"enabled": True, "profiles": [
            profile_entry("p1", 0.5), profile_entry("p2", 0.4), profile_entry("p3", 0.3),
            profile_entry("agg", 0.9), profile_entry("judge", 0.5),
        ]},
        "fsync": False,
    }
    data.update(copy.deepcopy(overrides))
    return data


def save_config(root: Path, data: dict, name: str = "experiment.yaml") -> Path:
    path = root / name
    path.write_text(yaml.safe_dump(data, sort_keys=False), encoding="utf-8")
    return path


def config_from(root: Path, data: dict) -> ExperimentConfig:
    return ExperimentConfig.from_dict(copy.deepcopy(data), base_dir=root)


def run_pipeline(config: ExperimentConfig, *, backend=None, replay: bool = False,
                 report: bool = True) -> Experiment:
    experiment = Experiment(config, backend=backend, replay=replay, sleep=lambda s: None)
    experiment.ingest(load_manifest(config.path(config.snippets)))
    experiment.run()
    experiment.evaluate()
    if report:
        experiment.report()
    return experiment


def mock_gateway(tmp_path: Path, profiles: list[MockProfile], *, prices=("1.00", "2.00"),
                 backend=None, **kwargs) -> Gateway:
    agents = {p.agent_name: AgentSpec(p.agent_name, "mock", pricing=Pricing(*prices)) for p in profiles}
    ledger = RunLedger(tmp_path / "ledger", fsync=False)
    return Gateway(agents, backend or MockBackend({p.agent_name: p for p in profiles}), ledger,
                   sleep=lambda s: None, **kwargs)


class FlakyBackend:
    """Wraps a backend and fails selected requests with a chosen exception."""

    def __init__(self, inner, should_fail, error) -> None:
        self.inner = inner
        self.should_fail = should_fail
        self.error = error
        self.sent = 0

    def send(self, agent, request):
        self.sent += 1
        if self.should_fail(agent, request, self.sent):
            raise self.error
        return self.inner.send(agent, request)
