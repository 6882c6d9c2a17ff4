"""Experiment configuration (YAML).

See ``README.md`` for the full schema with defaults. Relative paths inside
the file are resolved against the directory containing it.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import yaml

from .domain import AgentSpec, ApproachKind, Combination, Pricing, canonical_json, money_str, sha256_hex
from .ga import GAParams
from .gateway import Endpoint, MockProfile, RetryPolicy

_ID = re.compile(r"^[A-Za-z0-9][A-Za-z0-9._\-/]*$")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ArenaParams:
    k_factor: float = 32.0
    initial_rating: float = 1000.0
    rounds: int = 1

    def __post_init__(self) -> None:
        if self.k_factor <= 0 or self.rounds < 1:
            raise ConfigError("arena k_factor must be > 0 and rounds >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    snippets: str
    agents: tuple[AgentSpec, ...]
    combinations: tuple[Combination, ...]
    judge: str
    seed: int = 0
    output: str = "runs/experiment"
    repetitions: int = 5
    approaches: tuple[str, ...] = ("MoA", "GA", "Individual")
    moa_layers: int = 3
    ga: GAParams = field(default_factory=GAParams)
    arena: ArenaParams = field(default_factory=ArenaParams)
    per_combination: tuple[str, ...] | None = None
    cross_combinations: tuple[str, ...] = ()
    endpoints: tuple[Endpoint, ...] = ()
    mock: bool = False
    mock_profiles: tuple[MockProfile, ...] = ()
    retry: RetryPolicy = field(default_factory=RetryPolicy)
    workers: int = 1
    templates: str | None = None
    fragments: str | None = None
    fsync: bool = True
    base_dir: str = field(default=".", compare=False)

    # -- derived -------------------------------------------------------------

    @property
    def agent_map(self) -> dict[str, AgentSpec]:
        return {a.name: a for a in self.agents}

    @property
    def combination_map(self) -> dict[str, Combination]:
        return {c.id: c for c in self.combinations}

    @property
    def evaluated_combinations(self) -> tuple[str, ...]:
        if self.per_combination is None:
            return tuple(c.id for c in self.combinations)
        return self.per_combination

    def path(self, value: str | None) -> Path | None:
        if value is None:
            return None
        p = Path(value)
        return p if p.is_absolute() else Path(self.base_dir) / p

    @property
    def output_dir(self) -> Path:
        return self.path(self.output)

    @property
    def ledger_dir(self) -> Path:
        return self.output_dir / "ledger"

    @property
    def report_dir(self) -> Path:
        return self.output_dir / "reports"

    def approach_strings(self, combination: Combination) -> list[str]:
        out = []
        if "MoA" in self.approaches:
            out.append("MoA")
        if "GA" in self.approaches:
            out.append("GA")
        if "Individual" in self.approaches:
            out.extend(f"Individual:{m}" for m in combination.proposers)
        return out

    def config_hash(self) -> str:
        data = self.to_dict()
        data.pop("output")
        return sha256_hex(canonical_json(data))

    # -- validation ----------------------------------------------------------

    def validate(self) -> None:
        agents = self.agent_map
        if len(agents) != len(self.agents):
            raise ConfigError("agent names must be unique")
        for name in agents:
            if not _ID.match(name):
                raise ConfigError(f"agent name {name!r} has unsupported characters")
        if self.repetitions < 1:
            raise ConfigError("repetitions must be >= 1")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.moa_layers < 2:
            raise ConfigError("moa layers must be >= 2")
        bad = [a for a in self.approaches if a not in {k.value for k in ApproachKind}]
        if bad or not self.approaches:
            raise ConfigError(f"unknown approaches {bad}")
        combos = self.combination_map
        if len(combos) != len(self.combinations):
            raise ConfigError("combination ids must be unique")
        for combo in self.combinations:
            if not _ID.match(combo.id) or "/" in combo.id:
                raise ConfigError(f"combination id {combo.id!r} has unsupported characters")
            for name in (*combo.proposers, combo.aggregator):
                if name not in agents:
                    raise ConfigError(f"{combo.id}: unknown agent {name!r}")
        if self.judge not in agents:
            raise ConfigError(f"unknown judge agent {self.judge!r}")
        for cid in (*self.evaluated_combinations, *self.cross_combinations):
            if cid not in combos:
                raise ConfigError(f"evaluation references unknown combination {cid!r}")
        if self.cross_combinations and len(set(self.cross_combinations)) < 2:
            raise ConfigError("cross-combination ranking needs at least 2 combinations")
        if self.mock:
            profiles = {p.agent_name for p in self.mock_profiles}
            missing = sorted(set(agents) - profiles)
            if missing:
                raise ConfigError(f"mock mode: no profile for agents {missing}")
        else:
            endpoints = {e.id for e in self.endpoints}
            for agent in self.agents:
                if agent.endpoint_id not in endpoints:
                    raise ConfigError(f"agent {agent.name!r}: unknown endpoint {agent.endpoint_id!r}")

    # -- (de)serialization ---------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "output": self.output,
            "snippets": self.snippets,
            "repetitions": self.repetitions,
            "approaches": list(self.approaches),
            "agents": [
                {
                    "name": a.name,
                    "endpoint": a.endpoint_id,
                    "provenance": a.provenance_class.value,
                    "temperature": a.temperature,
                    "max_tokens": a.max_tokens,
                    "pricing": {
                        "prompt": money_str(a.pricing.prompt_per_million),
                        "completion": money_str(a.pricing.completion_per_million),
                    },
                }
                for a in self.agents
            ],
            "endpoints": [asdict(e) for e in self.endpoints],
            "combinations": [
                {"id": c.id, "proposers": list(c.proposers), "aggregator": c.aggregator}
                for c in self.combinations
            ],
            "judge": self.judge,
            "moa": {"layers": self.moa_layers},
            "ga": asdict(self.ga),
            "arena": asdict(self.arena),
            "evaluation": {
                "per_combination": None if self.per_combination is None else list(self.per_combination),
                "cross_combinations": list(self.cross_combinations),
            },
            "mock": {
                "enabled": self.mock,
                "profiles": [
                    {
                        "agent": p.agent_name,
                        "quality": p.quality_score,
                        "latency": {"fixed": p.latency_fixed, "per_token": p.latency_per_token},
                        "transform_seed": p.transform_seed,
                        "prompt_bonus": dict(sorted(p.prompt_bonus.items())),
                        "judge_bias": p.judge_bias,
                        "failure_rate": p.failure_rate,
                    }
                    for p in self.mock_profiles
                ],
            },
            "retry": asdict(self.retry),
            "workers": self.workers,
            "templates": self.templates,
            "fragments": self.fragments,
            "fsync": self.fsync,
        }

    @classmethod
    def from_dict(cls, data: dict, base_dir: str | Path = ".") -> ExperimentConfig:
        try:
            agents = tuple(
                AgentSpec(
                    name=str(a["name"]),
                    endpoint_id=str(a.get("endpoint", "mock")),
                    provenance_class=a.get("provenance", "commercial"),
                    temperature=a.get("temperature"),
                    max_tokens=a.get("max_tokens"),
                    pricing=Pricing(
                        str((a.get("pricing") or {}).get("prompt", "0")),
                        str((a.get("pricing") or {}).get("completion", "0")),
                    ),
                )
                for a in data.get("agents") or []
            )
            combinations = tuple(
                Combination(str(c["id"]), tuple(c["proposers"]), str(c["aggregator"]))
                for c in data.get("combinations") or []
            )
            mock = data.get("mock") or {}
            profiles = tuple(
                MockProfile(
                    agent_name=str(p["agent"]),
                    quality_score=float(p.get("quality", 0.5)),
                    latency_fixed=float((p.get("latency") or {}).get("fixed", 0.0)),
                    latency_per_token=float((p.get("latency") or {}).get("per_token", 0.0)),
                    transform_seed=int(p.get("transform_seed", 0)),
                    prompt_bonus={str(k): float(v) for k, v in (p.get("prompt_bonus") or {}).items()},
                    judge_bias=str(p.get("judge_bias", "first")),
                    failure_rate=float(p.get("failure_rate", 0.0)),
                )
                for p in mock.get("profiles") or []
            )
            evaluation = data.get("evaluation") or {}
            per_combination = evaluation.get("per_combination")
            config = cls(
                snippets=str(data["snippets"]),
                agents=agents,
                combinations=combinations,
                judge=str(data["judge"]),
                seed=int(data.get("seed", 0)),
                output=str(data.get("output", "runs/experiment")),
                repetitions=int(data.get("repetitions", 5)),
                approaches=tuple(data.get("approaches") or ("MoA", "GA", "Individual")),
                moa_layers=int((data.get("moa") or {}).get("layers", 3)),
                ga=GAParams(**(data.get("ga") or {})),
                arena=ArenaParams(**(data.get("arena") or {})),
                per_combination=None if per_combination is None else tuple(per_combination),
                cross_combinations=tuple(evaluation.get("cross_combinations") or ()),
                endpoints=tuple(Endpoint(**e) for e in data.get("endpoints") or []),
                mock=bool(mock.get("enabled", False)),
                mock_profiles=profiles,
                retry=RetryPolicy(**(data.get("retry") or {})),
                workers=int(data.get("workers", 1)),
                templates=data.get("templates"),
                fragments=data.get("fragments"),
                fsync=bool(data.get("fsync", True)),
                base_dir=str(base_dir),
            )
        except (KeyError, TypeError, ValueError) as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"invalid configuration: {exc}") from exc
        config.validate()
        return config

    def with_overrides(self, **changes) -> ExperimentConfig:
        updated = replace(self, **{k: v for k, v in changes.items() if v is not None})
        updated.validate()
        return updated


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return ExperimentConfig.from_dict(data, base_dir=path.parent)


def dump_config(config: ExperimentConfig) -> str:
    return yaml.safe_dump(config.to_dict(), sort_keys=False)
