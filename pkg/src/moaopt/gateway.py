"""Uniform access to chat-completion endpoints, live or mocked.

Every :meth:`Gateway.complete` call, successful or not, produces exactly one
:class:`~moaopt.domain.CallRecord` in the run ledger. Live endpoints speak
the common chat-completions HTTP schema::

    POST {base_url}/chat/completions
    Authorization: Bearer ${api_key_env}
    {"model": str, "messages": [{"role": str, "content": str}, ...],
     "temperature": float (optional), "max_tokens": int (optional)}

    200 -> {"choices": [{"message": {"content": str}}, ...],
            "usage": {"prompt_tokens": int, "completion_tokens": int}}

When ``usage`` is missing, token counts fall back to ``ceil(utf8_bytes / 4)``
and the record is flagged ``estimated_tokens``.
"""

from __future__ import annotations

import logging
import math
import os
import random
import re
import threading
import time
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Protocol

import httpx

from .domain import AgentSpec, CallRecord, call_cost, canonical_json, content_sha, sha256_hex
from .store import RunLedger

logger = logging.getLogger(__name__)

ROLES = ("system", "user", "assistant")


@dataclass(frozen=True)
class ChatRequest:
    agent_name: str
    messages: tuple[tuple[str, str], ...]
    temperature: float | None = None
    max_tokens: int | None = None
    request_seed: int = 0
    kind: str = "generate"  # "generate" or "judge"; only the mock backend looks at it

    def __post_init__(self) -> None:
        object.__setattr__(self, "messages", tuple((r, t) for r, t in self.messages))
        if any(role not in ROLES for role, _ in self.messages):
            raise ValueError("message roles must be system, user or assistant")
        if not any(role == "user" for role, _ in self.messages):
            raise ValueError("a chat request needs at least one user message")
        if not "".join(text for _, text in self.messages).strip():
            raise ValueError("prompt text is empty")

    @property
    def prompt_text(self) -> str:
        return "\n".join(text for _, text in self.messages)

    @property
    def last_user_text(self) -> str:
        return [text for role, text in self.messages if role == "user"][-1]


@dataclass(frozen=True)
class ChatResponse:
    text: str
    prompt_tokens: int
    completion_tokens: int
    latency: float
    estimated_tokens: bool = False

    def __post_init__(self) -> None:
        if self.prompt_tokens < 0 or self.completion_tokens < 0 or self.latency < 0:
            raise ValueError("token counts and latency must be non-negative")


def estimate_tokens(text: str) -> int:
    return math.ceil(len(text.encode("utf-8")) / 4)


class TransientError(Exception):
    def __init__(self, reason: str, retry_after: float | None = None) -> None:
        super().__init__(reason)
        self.reason = reason
        self.retry_after = retry_after


class PermanentError(Exception):
    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


class CallFailed(Exception):
    """Raised by :meth:`Gateway.complete` after the failure was recorded."""

    def __init__(self, record: CallRecord) -> None:
        super().__init__(f"{record.agent_name}: {record.reason}")
        self.record = record


class Backend(Protocol):
    def send(self, agent: AgentSpec, request: ChatRequest) -> ChatResponse: ...


# -- live HTTP ----------------------------------------------------------------

@dataclass(frozen=True)
class Endpoint:
    id: str
    base_url: str
    model: str
    api_key_env: str | None = None
    max_concurrency: int = 4
    timeout: float = 120.0


class HttpBackend:
    def __init__(self, endpoints: dict[str, Endpoint], *, transport: httpx.BaseTransport | None = None) -> None:
        self.endpoints = endpoints
        self._clients = {
            eid: httpx.Client(base_url=ep.base_url.rstrip("/"), timeout=ep.timeout, transport=transport)
            for eid, ep in endpoints.items()
        }

    def close(self) -> None:
        for client in self._clients.values():
            client.close()

    def send(self, agent: AgentSpec, request: ChatRequest) -> ChatResponse:
        endpoint = self.endpoints[agent.endpoint_id]
        payload: dict = {
            "model": endpoint.model,
            "messages": [{"role": r, "content": t} for r, t in request.messages],
        }
        temperature = request.temperature if request.temperature is not None else agent.temperature
        max_tokens = request.max_tokens if request.max_tokens is not None else agent.max_tokens
        if temperature is not None:
            payload["temperature"] = temperature
        if max_tokens is not None:
            payload["max_tokens"] = max_tokens
        headers = {}
        if endpoint.api_key_env:
            key = os.environ.get(endpoint.api_key_env)
            if not key:
                raise PermanentError(f"missing_secret:{endpoint.api_key_env}")
            headers["Authorization"] = f"Bearer {key}"

        start = time.perf_counter()
        try:
            resp = self._clients[endpoint.id].post("/chat/completions", json=payload, headers=headers)
        except httpx.TimeoutException as exc:
            raise TransientError("timeout") from exc
        except httpx.TransportError as exc:
            raise TransientError("connection") from exc
        latency = time.perf_counter() - start

        if resp.status_code == 429:
            retry_after = resp.headers.get("retry-after")
            try:
                wait = float(retry_after) if retry_after else None
            except ValueError:
                wait = None
            raise TransientError("rate_limited", wait)
        if resp.status_code >= 500:
            raise TransientError(f"http_{resp.status_code}")
        if resp.status_code >= 400:
            raise PermanentError(f"http_{resp.status_code}")
        try:
            data = resp.json()
            text = data["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise PermanentError("malformed") from exc
        if not isinstance(text, str) or not text.strip():
            raise PermanentError("malformed")
        usage = data.get("usage") or {}
        if isinstance(usage.get("prompt_tokens"), int) and isinstance(usage.get("completion_tokens"), int):
            return ChatResponse(text, usage["prompt_tokens"], usage["completion_tokens"], latency)
        return ChatResponse(
            text, estimate_tokens(request.prompt_text), estimate_tokens(text), latency, estimated_tokens=True
        )


# -- mock -----------------------------------------------------------------------

@dataclass(frozen=True)
class MockProfile:
    """Deterministic stand-in for a model.

    Generated code is the original snippet plus one annotation line carrying
    ``quality=<q>``; ``q`` is ``quality_score`` plus every ``prompt_bonus``
    whose key occurs in the prompt, clipped to [0, 1]. Acting as a judge, the
    profile prefers the candidate with the higher quality marker; on equal
    markers it follows ``judge_bias`` ("first" or "second" position).
    """

    agent_name: str
    quality_score: float = 0.5
    latency_fixed: float = 0.0
    latency_per_token: float = 0.0
    transform_seed: int = 0
    prompt_bonus: dict[str, float] = field(default_factory=dict)
    judge_bias: str = "first"
    failure_rate: float = 0.0

    def __post_init__(self) -> None:
        if not 0.0 <= self.quality_score <= 1.0:
            raise ValueError(f"quality_score must be in [0, 1], got {self.quality_score}")
        if not 0.0 <= self.failure_rate <= 1.0:
            raise ValueError("failure_rate must be in [0, 1]")
        if self.judge_bias not in ("first", "second"):
            raise ValueError("judge_bias must be 'first' or 'second'")
        if self.latency_fixed < 0 or self.latency_per_token < 0:
            raise ValueError("latency model must be non-negative")

    def latency(self, completion_tokens: int) -> float:
        return self.latency_fixed + self.latency_per_token * completion_tokens


_FENCE = re.compile(r"^```[^\n`]*\n(.*?)^```[ \t]*$", re.MULTILINE | re.DOTALL)
QUALITY_MARKER = re.compile(r"opt-variant [0-9a-f]+ quality=([0-9]+\.[0-9]+)")
_CANDIDATE_HEADER = re.compile(r"^### Candidate (\d+)\s*$", re.MULTILINE)
_HASH_COMMENT = {"python", "ruby", "shell", "bash", "sh", "r", "perl", "yaml", "toml", "makefile"}


def _comment_prefix(language: str) -> str:
    return "#" if language.lower() in _HASH_COMMENT else "//"


def _unit_float(*parts: str | int) -> float:
    return int(sha256_hex(*(str(p) for p in parts))[:13], 16) / 16**13


def marker_quality(text: str) -> float | None:
    found = QUALITY_MARKER.findall(text)
    return float(found[-1]) if found else None


def candidate_sections(prompt: str) -> dict[int, str]:
    heads = list(_CANDIDATE_HEADER.finditer(prompt))
    out = {}
    for i, head in enumerate(heads):
        end = heads[i + 1].start() if i + 1 < len(heads) else len(prompt)
        out[int(head.group(1))] = prompt[head.end():end]
    return out


def mock_complete(profile: MockProfile, request: ChatRequest) -> ChatResponse:
    prompt = request.prompt_text
    prompt_hash = content_sha(prompt)
    if profile.failure_rate and _unit_float(
        "fail", profile.transform_seed, request.request_seed, prompt_hash
    ) < profile.failure_rate:
        raise PermanentError("mock_failure")

    if request.kind == "judge":
        sections = candidate_sections(request.prompt_text)
        q1 = marker_quality(sections.get(1, ""))
        q2 = marker_quality(sections.get(2, ""))
        q1 = -1.0 if q1 is None else q1
        q2 = -1.0 if q2 is None else q2
        if q1 != q2:
            verdict = "1" if q1 > q2 else "2"
        else:
            verdict = "1" if profile.judge_bias == "first" else "2"
        text = f"VERDICT: {verdict}"
    else:
        user = request.last_user_text
        fence = re.search(r"^```([^\n`]*)\n(.*?)^```", user, re.MULTILINE | re.DOTALL)
        language, original = (fence.group(1).strip(), fence.group(2)) if fence else ("", user)
        quality = profile.quality_score + sum(
            bonus for cue, bonus in sorted(profile.prompt_bonus.items()) if cue in prompt
        )
        quality = min(1.0, max(0.0, quality))
        tag = sha256_hex("mock", str(profile.transform_seed), str(request.request_seed), prompt_hash)[:12]
        body = original.rstrip("\n")
        annotation = f"{_comment_prefix(language)} opt-variant {tag} quality={quality:.6f}"
        code = f"{body}\n{annotation}\n" if body else f"{annotation}\n"
        text = f"Optimized version:\n```{language}\n{code}```\n"

    completion_tokens = estimate_tokens(text)
    return ChatResponse(
        text=text,
        prompt_tokens=estimate_tokens(prompt),
        completion_tokens=completion_tokens,
        latency=profile.latency(completion_tokens),
    )


class MockBackend:
    def __init__(self, profiles: dict[str, MockProfile]) -> None:
        self.profiles = profiles

    def send(self, agent: AgentSpec, request: ChatRequest) -> ChatResponse:
        try:
            profile = self.profiles[agent.name]
        except KeyError:
            raise PermanentError(f"no_mock_profile:{agent.name}") from None
        return mock_complete(profile, request)


# -- gateway ------------------------------------------------------------------

@dataclass(frozen=True)
class RetryPolicy:
    attempts: int = 3
    base_delay: float = 1.0
    max_delay: float = 30.0

    def delay(self, attempt: int, key: str) -> float:
        """Exponential backoff with deterministic jitter in [0.5, 1.0)."""
        raw = min(self.max_delay, self.base_delay * 2 ** (attempt - 1))
        return raw * (0.5 + 0.5 * random.Random(f"{key}:{attempt}").random())


def request_key(request: ChatRequest, unit: str, role: str) -> str:
    return sha256_hex(canonical_json({
        "unit": unit,
        "role": role,
        "agent": request.agent_name,
        "messages": [list(m) for m in request.messages],
        "seed": request.request_seed,
        "kind": request.kind,
        "temperature": request.temperature,
        "max_tokens": request.max_tokens,
    }))


class Gateway:
    """Routes requests to a backend, retries, prices and ledgers every call."""

    def __init__(
        self,
        agents: dict[str, AgentSpec],
        backend: Backend,
        ledger: RunLedger,
        *,
        retry: RetryPolicy | None = None,
        concurrency: dict[str, int] | None = None,
        replay: bool = False,
        sleep: Callable[[float], None] = time.sleep,
    ) -> None:
        self.agents = agents
        self.backend = backend
        self.ledger = ledger
        self.retry = retry or RetryPolicy()
        self.replay = replay
        self.sleep = sleep
        self._caps = {eid: threading.Semaphore(n) for eid, n in (concurrency or {}).items()}
        self._lock = threading.Lock()
        self._seen: dict[str, int] = defaultdict(int)
        self.attempted = 0
        self.replayed = 0

    def complete(self, request: ChatRequest, *, unit: str, role: str) -> tuple[ChatResponse, CallRecord]:
        agent = self.agents.get(request.agent_name)
        if agent is None:
            raise KeyError(f"unknown agent {request.agent_name!r}")
        key = request_key(request, unit, role)

        if self.replay:
            with self._lock:
                occurrence = self._seen[key]
                self._seen[key] += 1
                prior = self.ledger.calls_for_key(key)
                if occurrence < len(prior) and prior[occurrence].ok and prior[occurrence].response_sha:
                    record = prior[occurrence]
                    self.replayed += 1
                    response = ChatResponse(
                        self.ledger.get_blob(record.response_sha), record.prompt_tokens,
                        record.completion_tokens, record.latency, record.estimated_tokens,
                    )
                    return response, record

        response, reason, attempts, elapsed = self._attempt(agent, request, key)
        common = dict(
            unit=unit, agent_name=agent.name, role=role, attempts=attempts,
            request_key=key, request_seed=request.request_seed,
            temperature=request.temperature if request.temperature is not None else agent.temperature,
            max_tokens=request.max_tokens if request.max_tokens is not None else agent.max_tokens,
        )
        if response is None:
            record = CallRecord(
                id="", prompt_tokens=0, completion_tokens=0, latency_us=round(elapsed * 1e6),
                cost=call_cost(0, 0, agent.pricing), outcome="failure", reason=reason, **common,
            )
            raise CallFailed(self._record(key, record))

        response_sha = self.ledger.put_blob(response.text)
        record = CallRecord(
            id="",
            prompt_tokens=response.prompt_tokens,
            completion_tokens=response.completion_tokens,
            latency_us=round(response.latency * 1e6),
            cost=call_cost(response.prompt_tokens, response.completion_tokens, agent.pricing),
            estimated_tokens=response.estimated_tokens,
            response_sha=response_sha,
            **common,
        )
        return response, self._record(key, record)

    def _record(self, key: str, record: CallRecord) -> CallRecord:
        with self._lock:
            occurrence = len(self.ledger.calls_for_key(key))
            record = replace(record, id="c-" + sha256_hex(key, str(occurrence))[:24])
            self.attempted += 1
            self.ledger.add_call(record)
        return record

    def _attempt(self, agent: AgentSpec, request: ChatRequest, key: str):
        cap = self._caps.get(agent.endpoint_id)
        elapsed = 0.0
        reason = "unknown"
        for attempt in range(1, self.retry.attempts + 1):
            try:
                if cap:
                    with cap:
                        response = self.backend.send(agent, request)
                else:
                    response = self.backend.send(agent, request)
                return response, None, attempt, elapsed + response.latency
            except PermanentError as exc:
                return None, exc.reason, attempt, elapsed
            except TransientError as exc:
                reason = exc.reason
                if attempt == self.retry.attempts:
                    break
                wait = exc.retry_after if exc.retry_after is not None else self.retry.delay(attempt, key)
                logger.info("%s: %s, retrying in %.2fs", agent.name, reason, wait)
                self.sleep(wait)
                elapsed += wait
        return None, reason, self.retry.attempts, elapsed


# -- output extraction ---------------------------------------------------------

class EmptyVariant(ValueError):
    """Raised when no code could be extracted from a model response."""


_PROSE = re.compile(
    r"^\s*(here(?:'s| is| are)\b|sure\b|certainly\b|below\b|okay\b|"
    r"the (?:optimized|optimised|following|above|improved|updated|refactored)\b|"
    r"this (?:version|code|implementation|optimi[sz]ation)\b|i(?:'ve| have)\b|"
    r"explanation\b|note\b|changes?\b|key (?:changes|improvements)\b|optimi[sz]ations?:)",
    re.IGNORECASE,
)


def extract_code_block(text: str) -> str:
    """Return the last fenced code block, or the text minus prose edges.

    Without fences, leading and trailing lines are dropped while they are blank
    or start like conversational prose ("Here is", "Sure", "The optimized",
    "This version", "I have", "Note", ...). Interior lines are kept verbatim.
    """
    blocks = _FENCE.findall(text)
    if blocks:
        # the newline before the closing fence belongs to the fence
        code = blocks[-1][:-1] if blocks[-1].endswith("\n") else blocks[-1]
    else:
        lines = text.splitlines(keepends=True)
        while lines and (not lines[0].strip() or _PROSE.match(lines[0])):
            lines.pop(0)
        while lines and (not lines[-1].strip() or _PROSE.match(lines[-1])):
            lines.pop()
        code = "".join(lines)
    if not code.strip():
        raise EmptyVariant("empty_variant")
    return code
