"""Bookkeeping shared by the optimization engines."""

from __future__ import annotations

from .domain import ApproachTag, CallRecord, OptimizationVariant, Totals, UnitKey, sha256_hex
from .gateway import CallFailed, ChatRequest, Gateway


class EngineFailure(Exception):
    """An approach could not produce a variant for its unit."""

    def __init__(self, reason: str, trace: list[str] | None = None) -> None:
        super().__init__(reason)
        self.reason = reason
        self.trace = trace or []


def derive_seed(*parts: object) -> int:
    return int(sha256_hex(*(str(p) for p in parts))[:15], 16)


class UnitRun:
    """Collects every call made on behalf of one unit (or tournament)."""

    def __init__(self, gateway: Gateway, unit: UnitKey | str) -> None:
        self.gateway = gateway
        self.unit = str(unit)
        self.records: list[CallRecord] = []

    @property
    def trace(self) -> list[str]:
        return [r.id for r in self.records]

    def ask(self, agent: str, messages: list[tuple[str, str]], *, role: str, seed: int,
            kind: str = "generate") -> str | None:
        """Issue one call; returns the reply text, or None if the call failed."""
        request = ChatRequest(agent_name=agent, messages=tuple(messages), request_seed=seed, kind=kind)
        try:
            response, record = self.gateway.complete(request, unit=self.unit, role=role)
        except CallFailed as exc:
            self.records.append(exc.record)
            return None
        self.records.append(record)
        return response.text

    def prompt(self, agent: str, text: str, *, role: str, seed: int) -> str | None:
        return self.ask(agent, [("user", text)], role=role, seed=seed)

    def variant(self, key: UnitKey, content: str, details: dict | None = None) -> OptimizationVariant:
        return OptimizationVariant(
            snippet_id=key.snippet_id,
            approach=ApproachTag.parse(key.approach),
            combination_id=key.combination_id,
            repetition_index=key.repetition,
            content=content,
            trace=tuple(self.trace),
            totals=Totals.of(self.records),
            details=details or {},
        )
