from __future__ import annotations

import json
import math
from decimal import Decimal

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from builders import mock_gateway
from moaopt.domain import AgentSpec, Pricing
from moaopt.gateway import (
    CallFailed,
    ChatRequest,
    EmptyVariant,
    Endpoint,
    Gateway,
    HttpBackend,
    MockProfile,
    RetryPolicy,
    estimate_tokens,
    extract_code_block,
    marker_quality,
    mock_complete,
)
from moaopt.store import RunLedger

TASK = "Optimize this:\n```python\nx = [i for i in range(10)]\n```\n"


def _request(agent="m", text=TASK, seed=0, kind="generate") -> ChatRequest:
    return ChatRequest(agent, (("user", text),), request_seed=seed, kind=kind)


# -- mock backend ----------------------------------------------------------------

def test_mock_is_deterministic():
    profile = MockProfile("m", 0.7, transform_seed=3)
    assert mock_complete(profile, _request()) == mock_complete(profile, _request())
    assert mock_complete(profile, _request(seed=1)).text != mock_complete(profile, _request()).text


def test_mock_output_keeps_original_and_carries_quality():
    response = mock_complete(MockProfile("m", 0.7), _request())
    code = extract_code_block(response.text)
    assert code.startswith("x = [i for i in range(10)]\n# opt-variant ")
    assert marker_quality(code) == 0.7


def test_mock_prompt_bonus_is_clipped():
    profile = MockProfile("m", 0.8, prompt_bonus={"Optimize": 0.5, "absent-cue": 0.1})
    assert marker_quality(mock_complete(profile, _request()).text) == 1.0
    low = MockProfile("m", 0.1, prompt_bonus={"Optimize": -0.5})
    assert marker_quality(mock_complete(low, _request()).text) == 0.0


def test_mock_latency_model():
    profile = MockProfile("m", latency_fixed=0.5, latency_per_token=0.001)
    assert profile.latency(500) == pytest.approx(1.0, abs=1e-12)
    response = mock_complete(profile, _request())
    assert response.latency == pytest.approx(0.5 + 0.001 * response.completion_tokens)


def test_mock_judge_prefers_higher_marker_and_breaks_ties_by_position():
    def judge_prompt(q1, q2):
        return (f"### Candidate 1\n```\nx\n# opt-variant ab quality={q1:.6f}\n```\n"
                f"### Candidate 2\n```\nx\n# opt-variant cd quality={q2:.6f}\n```\n")

    first = MockProfile("j", judge_bias="first")
    second = MockProfile("j", judge_bias="second")
    assert mock_complete(first, _request(text=judge_prompt(0.2, 0.9), kind="judge")).text == "VERDICT: 2"
    assert mock_complete(first, _request(text=judge_prompt(0.5, 0.5), kind="judge")).text == "VERDICT: 1"
    assert mock_complete(second, _request(text=judge_prompt(0.5, 0.5), kind="judge")).text == "VERDICT: 2"


def test_mock_failure_rate_extremes():
    always = MockProfile("m", failure_rate=1.0)
    with pytest.raises(Exception, match="mock_failure"):
        mock_complete(always, _request())
    rates = [MockProfile("m", failure_rate=0.3, transform_seed=1)]
    failures = 0
    for seed in range(400):
        try:
            mock_complete(rates[0], _request(seed=seed))
        except Exception:
            failures += 1
    assert 60 < failures < 180


# -- gateway accounting ---------------------------------------------------------

def test_one_record_per_call_with_exact_cost(tmp_path):
    gw = mock_gateway(tmp_path, [MockProfile("m", 0.5, latency_fixed=0.5, latency_per_token=0.001)],
                      prices=("2.00", "8.00"))
    response, record = gw.complete(_request(), unit="u", role="r")
    assert len(gw.ledger.calls) == 1
    assert gw.ledger.calls[0] == record
    expected = (Decimal(response.prompt_tokens) * 2 + Decimal(response.completion_tokens) * 8) / 10**6
    assert record.cost == expected
    assert record.latency_us == round((0.5 + 0.001 * response.completion_tokens) * 1e6)
    assert gw.ledger.get_blob(record.response_sha) == response.text


def test_repeated_identical_requests_get_distinct_ids(tmp_path):
    gw = mock_gateway(tmp_path, [MockProfile("m")])
    ids = {gw.complete(_request(), unit="u", role="r")[1].id for _ in range(3)}
    assert len(ids) == 3
    assert len(gw.ledger.calls) == 3


def test_failed_call_is_recorded_then_raised(tmp_path):
    gw = mock_gateway(tmp_path, [MockProfile("m", failure_rate=1.0)])
    with pytest.raises(CallFailed) as info:
        gw.complete(_request(), unit="u", role="r")
    record = info.value.record
    assert record.outcome == "failure" and record.reason == "mock_failure"
    assert record.attempts == 1
    assert gw.ledger.calls == [record]


def test_replay_reuses_recorded_calls(tmp_path):
    gw = mock_gateway(tmp_path, [MockProfile("m")])
    first, record = gw.complete(_request(), unit="u", role="r")
    replaying = Gateway(gw.agents, gw.backend, gw.ledger, replay=True)
    again, replayed = replaying.complete(_request(), unit="u", role="r")
    assert (again.text, replayed) == (first.text, record)
    assert replaying.replayed == 1 and replaying.attempted == 0
    replaying.complete(_request(), unit="u", role="r")
    assert replaying.attempted == 1
    assert len(gw.ledger.calls) == 2


def test_retry_delay_is_bounded_and_deterministic():
    policy = RetryPolicy(attempts=5, base_delay=1.0, max_delay=4.0)
    for attempt in range(1, 6):
        raw = min(4.0, 2 ** (attempt - 1))
        assert 0.5 * raw <= policy.delay(attempt, "k") < raw
        assert policy.delay(attempt, "k") == policy.delay(attempt, "k")


@given(st.text(min_size=0, max_size=200))
def test_token_estimate_is_ceil_bytes_over_four(text):
    assert estimate_tokens(text) == math.ceil(len(text.encode("utf-8")) / 4)


# -- HTTP backend ---------------------------------------------------------------

def _http_gateway(tmp_path, handler, *, attempts=3, key_env="TEST_LLM_KEY"):
    sleeps = []
    endpoint = Endpoint("ep", "https://llm.invalid/v1", "model-x", api_key_env=key_env)
    backend = HttpBackend({"ep": endpoint}, transport=httpx.MockTransport(handler))
    agents = {"m": AgentSpec("m", "ep", pricing=Pricing("1", "2"))}
    gw = Gateway(agents, backend, RunLedger(tmp_path / "ledger", fsync=False),
                 retry=RetryPolicy(attempts=attempts), sleep=sleeps.append)
    return gw, sleeps


def _ok(content="```python\nx = 1\n```", usage=True):
    body = {"choices": [{"message": {"role": "assistant", "content": content}}]}
    if usage:
        body["usage"] = {"prompt_tokens": 12, "completion_tokens": 7}
    return httpx.Response(200, json=body)


@pytest.fixture(autouse=True)
def _api_key(monkeypatch):
    monkeypatch.setenv("TEST_LLM_KEY", "secret-value")


def test_http_request_shape_and_usage(tmp_path):
    seen = []

    def handler(request):
        seen.append(request)
        return _ok()

    gw, _ = _http_gateway(tmp_path, handler)
    response, record = gw.complete(_request(), unit="u", role="r")
    body = json.loads(seen[0].content)
    assert seen[0].url.path == "/v1/chat/completions"
    assert seen[0].headers["authorization"] == "Bearer secret-value"
    assert body["model"] == "model-x"
    assert body["messages"] == [{"role": "user", "content": TASK}]
    assert (record.prompt_tokens, record.completion_tokens) == (12, 7)
    assert record.cost == Decimal("0.000026")
    assert not record.estimated_tokens


def test_http_missing_usage_falls_back_to_estimate(tmp_path):
    gw, _ = _http_gateway(tmp_path, lambda r: _ok("abcdefghi", usage=False))
    _, record = gw.complete(_request(), unit="u", role="r")
    assert record.estimated_tokens
    assert record.completion_tokens == 3
    assert record.prompt_tokens == estimate_tokens(TASK)


def test_http_retries_server_errors_then_succeeds(tmp_path):
    replies = iter([httpx.Response(503), httpx.Response(502), _ok()])
    gw, sleeps = _http_gateway(tmp_path, lambda r: next(replies))
    _, record = gw.complete(_request(), unit="u", role="r")
    assert record.ok and record.attempts == 3
    assert len(sleeps) == 2
    assert len(gw.ledger.calls) == 1


def test_http_rate_limit_honours_retry_after(tmp_path):
    replies = iter([httpx.Response(429, headers={"Retry-After": "7"}), _ok()])
    gw, sleeps = _http_gateway(tmp_path, lambda r: next(replies))
    _, record = gw.complete(_request(), unit="u", role="r")
    assert sleeps == [7.0]
    assert record.attempts == 2


def test_http_timeouts_exhaust_retries(tmp_path):
    def handler(request):
        raise httpx.ReadTimeout("slow", request=request)

    gw, sleeps = _http_gateway(tmp_path, handler)
    with pytest.raises(CallFailed) as info:
        gw.complete(_request(), unit="u", role="r")
    assert info.value.record.reason == "timeout"
    assert info.value.record.attempts == 3
    assert len(sleeps) == 2
    assert info.value.record.latency_us == round(sum(sleeps) * 1e6)


@pytest.mark.parametrize("response, reason", [
    (httpx.Response(400, json={"error": "bad"}), "http_400"),
    (httpx.Response(200, text="not json"), "malformed"),
    (httpx.Response(200, json={"choices": []}), "malformed"),
    (httpx.Response(200, json={"choices": [{"message": {"content": "  "}}]}), "malformed"),
])
def test_http_permanent_failures_are_not_retried(tmp_path, response, reason):
    gw, sleeps = _http_gateway(tmp_path, lambda r: response)
    with pytest.raises(CallFailed) as info:
        gw.complete(_request(), unit="u", role="r")
    assert info.value.record.reason == reason
    assert info.value.record.attempts == 1
    assert sleeps == []


def test_http_missing_secret_fails_without_network(tmp_path, monkeypatch):
    monkeypatch.delenv("TEST_LLM_KEY")

    def handler(request):
        raise AssertionError("no request expected")

    gw, _ = _http_gateway(tmp_path, handler)
    with pytest.raises(CallFailed) as info:
        gw.complete(_request(), unit="u", role="r")
    assert info.value.record.reason == "missing_secret:TEST_LLM_KEY"


# -- code extraction -----------------------------------------------------------

@pytest.mark.parametrize("text, expected", [
    ("```python\na+b\n```", "a+b"),
    ("Here is the code:\n```py\nfirst\n```\nand better:\n```py\nsecond\n```\n", "second"),
    ("Sure! Here is the optimized version:\n\nx = 1\ny = 2\n\nThe optimized code avoids loops.\n",
     "x = 1\ny = 2\n"),
    ("x = 1\n# note: keep\ny = 2\n", "x = 1\n# note: keep\ny = 2\n"),
])
def test_extract_code_block(text, expected):
    assert extract_code_block(text) == expected


@pytest.mark.parametrize("text", ["", "   \n", "```\n\n```", "Here is the code:\n\n"])
def test_extract_code_block_rejects_empty(text):
    with pytest.raises(EmptyVariant):
        extract_code_block(text)


def test_chat_request_validation():
    with pytest.raises(ValueError):
        ChatRequest("m", (("system", "only system"),))
    with pytest.raises(ValueError):
        ChatRequest("m", (("user", "  "),))
    with pytest.raises(ValueError):
        ChatRequest("m", (("tool", "x"),))


def test_unknown_agent_is_a_programming_error(tmp_path):
    gw = mock_gateway(tmp_path, [MockProfile("m")])
    with pytest.raises(KeyError):
        gw.complete(_request(agent="nobody"), unit="u", role="r")
