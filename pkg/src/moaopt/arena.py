"""ELO pairwise tournaments judged by an LLM.

Each match is judged twice, once per presentation order. Agreement gives a
win (1 or 0); disagreement gives a draw (0.5). ELO updates are applied one
match at a time in the canonical order (round, variant_a id, variant_b id),
so a tournament's result never depends on the order judge calls return in.
"""

from __future__ import annotations

import itertools
import logging
import math
import re
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

from .domain import CodeSnippet, content_sha, sha256_hex
from .prompts import PromptSet
from .unit import UnitRun, derive_seed

logger = logging.getLogger(__name__)

INITIAL_RATING = 1000.0
DEFAULT_K = 32.0

PER_COMBINATION = "per_combination"
CROSS = "cross"


def expected_score(r_a: float, r_b: float) -> float:
    return 1.0 / (1.0 + 10.0 ** ((r_b - r_a) / 400.0))


def elo_update(r_a: float, r_b: float, score_a: float, k: float = DEFAULT_K) -> tuple[float, float]:
    """Classical ELO update for one match; returns the new (r_a, r_b)."""
    if k <= 0:
        raise ValueError("k must be positive")
    if score_a not in (0, 0.5, 1):
        raise ValueError(f"score must be 0, 0.5 or 1, got {score_a}")
    delta = k * (score_a - expected_score(r_a, r_b))
    # B's change is the exact negation of A's, which keeps the pool zero-sum
    return r_a + delta, r_b - delta


def average_ranks(values: dict[str, float]) -> dict[str, float]:
    """Rank 1 = highest value; tied values share the mean of their ranks."""
    ordered = sorted(values.items(), key=lambda kv: (-kv[1], kv[0]))
    ranks: dict[str, float] = {}
    i = 0
    while i < len(ordered):
        j = i
        while j + 1 < len(ordered) and ordered[j + 1][1] == ordered[i][1]:
            j += 1
        shared = (i + 1 + j + 1) / 2
        for name, _ in ordered[i:j + 1]:
            ranks[name] = shared
        i = j + 1
    return ranks


# -- judging --------------------------------------------------------------------

_VERDICT = re.compile(r"VERDICT:\s*\**\s*([12])\b", re.IGNORECASE)


def parse_verdict(text: str | None) -> int | None:
    if not text:
        return None
    found = set(_VERDICT.findall(text))
    return int(found.pop()) if len(found) == 1 else None


@dataclass(frozen=True)
class Contestant:
    id: str
    content: str


@dataclass
class JudgeOutcome:
    score_a: float | None  # None when the match failed
    status: str            # "agree", "disagree", "identical" or "failed"
    verdicts: tuple[int | None, int | None] = (None, None)
    calls: list[str] = field(default_factory=list)


def _ordering_verdict(run: UnitRun, judge: str, prompt: str, reask: str, seed: int) -> int | None:
    reply = run.ask(judge, [("user", prompt)], role="judge", seed=seed, kind="judge")
    verdict = parse_verdict(reply)
    if verdict is None and reply is not None:
        retry = run.ask(judge, [("user", prompt), ("assistant", reply), ("user", reask)],
                        role="judge", seed=seed, kind="judge")
        verdict = parse_verdict(retry)
    return verdict


def judge_pair(snippet: CodeSnippet, a: Contestant, b: Contestant, judge: str, *,
               run: UnitRun, prompts: PromptSet, seed: int) -> JudgeOutcome:
    """Order-swapped double judging of A against B; returns A's score."""
    if a.id == b.id or content_sha(a.content) == content_sha(b.content):
        return JudgeOutcome(0.5, "identical")
    before = len(run.records)
    reask = prompts.judge_reask()
    # which candidate won, mapped back to "a"/"b"
    first = _ordering_verdict(run, judge, prompts.judge(snippet, a.content, b.content), reask,
                              derive_seed(seed, "ab"))
    second = _ordering_verdict(run, judge, prompts.judge(snippet, b.content, a.content), reask,
                               derive_seed(seed, "ba"))
    calls = [r.id for r in run.records[before:]]
    winners = (
        None if first is None else ("a" if first == 1 else "b"),
        None if second is None else ("b" if second == 1 else "a"),
    )
    if winners == (None, None):
        return JudgeOutcome(None, "failed", (first, second), calls)
    if winners[0] == winners[1]:
        return JudgeOutcome(1.0 if winners[0] == "a" else 0.0, "agree", (first, second), calls)
    return JudgeOutcome(0.5, "disagree", (first, second), calls)


# -- tournaments ----------------------------------------------------------------

@dataclass(frozen=True)
class MatchRecord:
    id: str
    tournament: str
    snippet_id: str
    variant_a: str
    variant_b: str
    round: int
    score_a: float | None
    status: str
    judge_calls: tuple[str, ...]

    @property
    def score_b(self) -> float | None:
        return None if self.score_a is None else 1.0 - self.score_a

    def to_dict(self) -> dict:
        data = asdict(self)
        data["judge_calls"] = list(self.judge_calls)
        return data


@dataclass
class TournamentResult:
    key: str
    ratings: dict[str, float]
    matches: list[MatchRecord]
    k: float
    rounds: int


def schedule(variant_ids: list[str], rounds: int) -> list[tuple[int, str, str]]:
    """Full round robin per round, in canonical (round, a, b) order."""
    ids = sorted(set(variant_ids))
    return [(r, a, b) for r in range(1, rounds + 1) for a, b in itertools.combinations(ids, 2)]


def run_tournament(snippet: CodeSnippet, contestants: list[Contestant], judge: str, *,
                   run: UnitRun, prompts: PromptSet, k: float = DEFAULT_K, rounds: int = 1,
                   seed: int = 0, initial: float = INITIAL_RATING, workers: int = 1) -> TournamentResult:
    if len(contestants) < 2:
        raise ValueError("a tournament needs at least 2 variants")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    by_id = {c.id: c for c in contestants}
    if len(by_id) != len(contestants):
        raise ValueError("duplicate variant ids in tournament")
    fixtures = schedule(list(by_id), rounds)

    def play(fixture: tuple[int, str, str]) -> JudgeOutcome:
        rnd, a, b = fixture
        sub = UnitRun(run.gateway, run.unit)
        outcome = judge_pair(snippet, by_id[a], by_id[b], judge, run=sub, prompts=prompts,
                             seed=derive_seed(seed, rnd, a, b))
        run.records.extend(sub.records)
        return outcome

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(play, fixtures))
    else:
        outcomes = [play(f) for f in fixtures]

    ratings = {vid: float(initial) for vid in sorted(by_id)}
    matches = []
    for (rnd, a, b), outcome in zip(fixtures, outcomes):
        if outcome.score_a is not None:
            ratings[a], ratings[b] = elo_update(ratings[a], ratings[b], outcome.score_a, k)
        matches.append(MatchRecord(
            id="m-" + sha256_hex(run.unit, str(rnd), a, b)[:24],
            tournament=run.unit, snippet_id=snippet.id, variant_a=a, variant_b=b, round=rnd,
            score_a=outcome.score_a, status=outcome.status, judge_calls=tuple(outcome.calls),
        ))
    return TournamentResult(run.unit, ratings, matches, k, rounds)


def tournament_key(mode: str, group: str, repetition: int, snippet_id: str) -> str:
    return f"tournament:{mode}:{group}:{repetition}:{snippet_id}"


# -- aggregation over the ledger ---------------------------------------------------

@dataclass
class Standing:
    mean_rank: float | None
    mean_elo: float | None
    pools: int
    excluded: int


def rank_per_combination(ledger, combination_id: str, approaches: list[str]) -> dict[str, Standing]:
    """Mean rank and mean ELO per approach over every rated (snippet, repetition) pool.

    ``approaches`` are approach strings (``MoA``, ``GA``, ``Individual:<model>``).
    A pool lacking an approach counts as an exclusion for that approach only.
    """
    rank_sums: dict[str, list[float]] = defaultdict(list)
    elo_sums: dict[str, list[float]] = defaultdict(list)
    excluded: dict[str, int] = defaultdict(int)
    pools = [t for t in ledger.tournaments
             if t["mode"] == PER_COMBINATION and t["group"] == combination_id]
    unrated = [t for t in ledger.skipped_tournaments
               if t["mode"] == PER_COMBINATION and t["group"] == combination_id]
    for t in sorted(pools, key=lambda t: t["key"]):
        ratings = {s["subject"]: s["rating"] for s in t["standings"]}
        ranks = average_ranks(ratings)
        for approach in approaches:
            if approach in ranks:
                rank_sums[approach].append(ranks[approach])
                elo_sums[approach].append(ratings[approach])
            else:
                excluded[approach] += 1
    for t in unrated:
        for approach in approaches:
            excluded[approach] += 1
    return {
        approach: Standing(
            mean_rank=_mean(rank_sums[approach]),
            mean_elo=_mean(elo_sums[approach]),
            pools=len(rank_sums[approach]),
            excluded=excluded[approach],
        )
        for approach in approaches
    }


def rank_cross_combination(ledger, combinations: list[str]) -> dict[tuple[str, str], Standing]:
    """Mean ELO per (approach, combination) over complete cross-combination pools."""
    group = cross_group(combinations)
    per: dict[tuple[str, str], list[float]] = defaultdict(list)
    ranks_per: dict[tuple[str, str], list[float]] = defaultdict(list)
    pools = [t for t in ledger.tournaments if t["mode"] == CROSS and t["group"] == group]
    for t in sorted(pools, key=lambda t: t["key"]):
        ratings = {s["subject"]: s["rating"] for s in t["standings"]}
        ranks = average_ranks(ratings)
        for subject, rating in ratings.items():
            approach, combination = subject.split("@", 1)
            per[(approach, combination)].append(rating)
            ranks_per[(approach, combination)].append(ranks[subject])
    return {
        key: Standing(_mean(ranks_per[key]), _mean(values), len(values), 0)
        for key, values in sorted(per.items())
    }


def cross_group(combinations: list[str]) -> str:
    return "+".join(combinations)


def _mean(values: list[float]) -> float | None:
    return math.fsum(values) / len(values) if values else None
