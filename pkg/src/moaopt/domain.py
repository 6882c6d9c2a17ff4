"""Core value types: snippets, agents, combinations, calls, variants."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field
from decimal import Decimal, localcontext
from enum import Enum
from typing import Any

ONE_MILLION = Decimal(1_000_000)


class DomainError(ValueError):
    """Raised when a value object would violate its invariants."""


def sha256_hex(*parts: str | bytes) -> str:
    h = hashlib.sha256()
    for part in parts:
        data = part.encode("utf-8") if isinstance(part, str) else part
        # length prefix keeps ("ab", "c") and ("a", "bc") apart
        h.update(len(data).to_bytes(8, "big"))
        h.update(data)
    return h.hexdigest()


def canonical_json(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def snippet_id(path: str, span: tuple[int, int], content: str) -> str:
    """Deterministic identifier for a snippet.

    The id is a SHA-256 digest over the POSIX-normalized path, the inclusive
    line span and the UTF-8 content, so it is stable across platforms.
    """
    if not content:
        raise DomainError("snippet content must be non-empty")
    start, end = span
    norm_path = path.replace("\\", "/")
    return "s-" + sha256_hex("snippet", norm_path, f"{start}:{end}", content)[:24]


def content_sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def to_money(value: Any) -> Decimal:
    if isinstance(value, float):
        # floats go through repr so 0.15 stays 0.15
        value = repr(value)
    money = Decimal(value)
    if not money.is_finite():
        raise DomainError(f"money value must be finite, got {value!r}")
    return money


def call_cost(prompt_tokens: int, completion_tokens: int, pricing: Pricing) -> Decimal:
    """Exact decimal cost of one call given per-1M-token prices."""
    with localcontext() as ctx:
        ctx.prec = 50
        cost = (
            Decimal(prompt_tokens) * pricing.prompt_per_million
            + Decimal(completion_tokens) * pricing.completion_per_million
        ) / ONE_MILLION
    return cost.normalize() if cost else Decimal(0)


def money_str(value: Decimal) -> str:
    """Plain (non-scientific) rendering used in ledgers and reports."""
    if value == 0:
        return "0"
    text = format(value.normalize(), "f")
    return text


@dataclass(frozen=True)
class CodeSnippet:
    source_path: str
    language_tag: str
    content: str
    line_span: tuple[int, int]
    id: str = ""

    def __post_init__(self) -> None:
        if not self.content:
            raise DomainError(f"empty content for {self.source_path}")
        start, end = self.line_span
        if start < 1 or start > end:
            raise DomainError(f"invalid line span {start}..{end} for {self.source_path}")
        expected = snippet_id(self.source_path, self.line_span, self.content)
        if not self.id:
            object.__setattr__(self, "id", expected)
        elif self.id != expected:
            raise DomainError(f"snippet id {self.id} does not match its content")

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "source_path": self.source_path,
            "language_tag": self.language_tag,
            "content": self.content,
            "line_span": list(self.line_span),
        }

    @classmethod
    def from_dict(cls, data: dict) -> CodeSnippet:
        return cls(
            source_path=data["source_path"],
            language_tag=data["language_tag"],
            content=data["content"],
            line_span=(int(data["line_span"][0]), int(data["line_span"][1])),
            id=data.get("id", ""),
        )


class ProvenanceClass(str, Enum):
    OPEN_SOURCE = "open_source"
    COMMERCIAL = "commercial"


@dataclass(frozen=True)
class Pricing:
    prompt_per_million: Decimal = Decimal(0)
    completion_per_million: Decimal = Decimal(0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "prompt_per_million", to_money(self.prompt_per_million))
        object.__setattr__(self, "completion_per_million", to_money(self.completion_per_million))
        if self.prompt_per_million < 0 or self.completion_per_million < 0:
            raise DomainError("pricing must be non-negative")


@dataclass(frozen=True)
class AgentSpec:
    name: str
    endpoint_id: str
    provenance_class: ProvenanceClass = ProvenanceClass.COMMERCIAL
    temperature: float | None = None
    max_tokens: int | None = None
    pricing: Pricing = field(default_factory=Pricing)

    def __post_init__(self) -> None:
        if not self.name:
            raise DomainError("agent name must be non-empty")
        object.__setattr__(self, "provenance_class", ProvenanceClass(self.provenance_class))


@dataclass(frozen=True)
class Combination:
    id: str
    proposers: tuple[str, ...]
    aggregator: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "proposers", tuple(self.proposers))
        if len(self.proposers) != 3 or len(set(self.proposers)) != 3:
            raise DomainError(f"{self.id}: exactly 3 distinct proposers required, got {self.proposers}")


class ApproachKind(str, Enum):
    MOA = "MoA"
    GA = "GA"
    INDIVIDUAL = "Individual"


@dataclass(frozen=True, order=True)
class ApproachTag:
    kind: ApproachKind
    model_name: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ApproachKind(self.kind))
        if (self.kind is ApproachKind.INDIVIDUAL) != (self.model_name is not None):
            raise DomainError("model_name is required for Individual approaches and only for them")

    def __str__(self) -> str:
        if self.kind is ApproachKind.INDIVIDUAL:
            return f"Individual:{self.model_name}"
        return self.kind.value

    @property
    def label(self) -> str:
        """Short display label; individuals are shown by model name."""
        return self.model_name if self.model_name else self.kind.value

    @classmethod
    def parse(cls, text: str) -> ApproachTag:
        kind, _, model = text.partition(":")
        return cls(ApproachKind(kind), model or None)

    def check_against(self, combination: Combination) -> None:
        if self.model_name is not None and self.model_name not in combination.proposers:
            raise DomainError(f"{self.model_name} is not a proposer of {combination.id}")


@dataclass(frozen=True, order=True)
class UnitKey:
    """Idempotency key of one experimental unit."""

    snippet_id: str
    approach: str
    combination_id: str
    repetition: int

    def __str__(self) -> str:
        return f"{self.snippet_id}|{self.approach}|{self.combination_id}|{self.repetition}"

    @classmethod
    def parse(cls, text: str) -> UnitKey:
        snippet, approach, combination, rep = text.split("|")
        return cls(snippet, approach, combination, int(rep))


@dataclass(frozen=True)
class CallRecord:
    id: str
    unit: str
    agent_name: str
    role: str
    prompt_tokens: int
    completion_tokens: int
    latency_us: int
    cost: Decimal
    outcome: str = "success"
    reason: str | None = None
    estimated_tokens: bool = False
    attempts: int = 1
    request_key: str = ""
    response_sha: str | None = None
    request_seed: int = 0
    temperature: float | None = None
    max_tokens: int | None = None

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0 or self.latency_us < 0:
            raise DomainError("token counts and latency must be non-negative")
        if self.outcome not in ("success", "failure"):
            raise DomainError(f"bad outcome {self.outcome!r}")

    @property
    def ok(self) -> bool:
        return self.outcome == "success"

    @property
    def latency(self) -> float:
        return self.latency_us / 1e6

    def to_dict(self) -> dict:
        data = asdict(self)
        data["cost"] = money_str(self.cost)
        return data

    @classmethod
    def from_dict(cls, data: dict) -> CallRecord:
        data = dict(data)
        data["cost"] = Decimal(data["cost"])
        return cls(**data)


@dataclass(frozen=True)
class Totals:
    calls: int = 0
    prompt_tokens: int = 0
    completion_tokens: int = 0
    cost: Decimal = Decimal(0)
    latency_us: int = 0

    @property
    def wall_time(self) -> float:
        return self.latency_us / 1e6

    def __add__(self, other: Totals) -> Totals:
        return Totals(
            self.calls + other.calls,
            self.prompt_tokens + other.prompt_tokens,
            self.completion_tokens + other.completion_tokens,
            self.cost + other.cost,
            self.latency_us + other.latency_us,
        )

    @classmethod
    def of(cls, calls: list[CallRecord]) -> Totals:
        total = cls()
        for call in calls:
            total = total + cls(1, call.prompt_tokens, call.completion_tokens, call.cost, call.latency_us)
        return total

    def to_dict(self) -> dict:
        return {
            "calls": self.calls,
            "prompt_tokens": self.prompt_tokens,
            "completion_tokens": self.completion_tokens,
            "cost": money_str(self.cost),
            "latency_us": self.latency_us,
        }

    @classmethod
    def from_dict(cls, data: dict) -> Totals:
        return cls(
            data["calls"], data["prompt_tokens"], data["completion_tokens"],
            Decimal(data["cost"]), data["latency_us"],
        )


@dataclass(frozen=True)
class OptimizationVariant:
    snippet_id: str
    approach: ApproachTag
    combination_id: str
    repetition_index: int
    content: str
    trace: tuple[str, ...]
    totals: Totals
    details: dict = field(default_factory=dict, compare=False)
    id: str = ""

    def __post_init__(self) -> None:
        if self.repetition_index < 1:
            raise DomainError("repetition_index must be >= 1")
        if not self.content.strip():
            raise DomainError("variant content is empty")
        object.__setattr__(self, "trace", tuple(self.trace))
        if not self.id:
            object.__setattr__(self, "id", "v-" + sha256_hex(
                "variant", self.snippet_id, str(self.approach), self.combination_id,
                str(self.repetition_index), self.content,
            )[:24])

    @property
    def content_sha(self) -> str:
        return content_sha(self.content)

    @property
    def unit(self) -> UnitKey:
        return UnitKey(self.snippet_id, str(self.approach), self.combination_id, self.repetition_index)

    def check_totals(self, calls: list[CallRecord]) -> None:
        if Totals.of(calls) != self.totals:
            raise DomainError(f"variant {self.id} totals do not reconcile with its trace")
