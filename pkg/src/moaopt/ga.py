"""Vanilla genetic algorithm over optimization prompts.

Genomes are ordered lists of instruction-fragment ids. Each generation every
genome is rendered to a prompt, its target proposer writes one variant, and
the variants are scored by a pluggable fitness function. Selection is a
size-``tournament_size`` tournament, crossover is single point, mutation acts
per fragment (swap, insert or delete). The run stops once the best-ever
fitness has not improved for ``stall_generations`` generations in a row, or
after ``max_generations``. The best-ever variant is returned.
"""

from __future__ import annotations

import itertools
import logging
import math
import random
from dataclasses import dataclass, field
from typing import Protocol

from .arena import Contestant, judge_pair
from .domain import (
    ApproachKind,
    ApproachTag,
    CodeSnippet,
    Combination,
    OptimizationVariant,
    UnitKey,
    content_sha,
)
from .gateway import EmptyVariant, Gateway, extract_code_block
from .prompts import Fragment, PromptSet
from .unit import EngineFailure, UnitRun, derive_seed

logger = logging.getLogger(__name__)

GA = ApproachTag(ApproachKind.GA)


@dataclass(frozen=True)
class PromptGenome:
    fragments: tuple[str, ...]
    agent: str

    def __post_init__(self) -> None:
        object.__setattr__(self, "fragments", tuple(self.fragments))
        if not self.fragments:
            raise ValueError("a genome needs at least one fragment")

    def validate(self, library: set[str], max_fragments: int) -> None:
        if len(self.fragments) > max_fragments:
            raise ValueError(f"genome has {len(self.fragments)} fragments, max is {max_fragments}")
        unknown = [f for f in self.fragments if f not in library]
        if unknown:
            raise ValueError(f"unknown fragment ids {unknown}")


@dataclass(frozen=True)
class GAParams:
    population: int = 6
    max_generations: int = 5
    stall_generations: int = 2
    mutation_rate: float = 0.2
    crossover_rate: float = 0.9
    tournament_size: int = 2
    max_fragments: int = 4
    judge_budget: int | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.population < 2:
            raise ValueError("population must be >= 2")
        if self.max_generations < 1:
            raise ValueError("max_generations must be >= 1")
        if self.stall_generations < 1:
            raise ValueError("stall_generations must be >= 1")
        for name in ("mutation_rate", "crossover_rate"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must be in [0, 1]")
        if self.tournament_size < 1 or self.max_fragments < 1:
            raise ValueError("tournament_size and max_fragments must be >= 1")
        if self.judge_budget is not None and self.judge_budget < 1:
            raise ValueError("judge_budget must be >= 1")

    @property
    def matches_per_generation(self) -> int:
        """Judge budget: C(N, 2) by default, never below N."""
        budget = self.judge_budget or math.comb(self.population, 2)
        return max(budget, self.population)


def _dedup(items) -> tuple[str, ...]:
    return tuple(dict.fromkeys(items))


def crossover_at(a: PromptGenome, b: PromptGenome, cut: int,
                 max_fragments: int) -> tuple[PromptGenome, PromptGenome]:
    """Swap tails after the first ``cut`` fragments of each parent."""
    if not 1 <= cut <= min(len(a.fragments), len(b.fragments)):
        raise ValueError(f"cut {cut} out of range")
    first = _dedup(a.fragments[:cut] + b.fragments[cut:])[:max_fragments]
    second = _dedup(b.fragments[:cut] + a.fragments[cut:])[:max_fragments]
    return PromptGenome(first, a.agent), PromptGenome(second, b.agent)


def crossover(a: PromptGenome, b: PromptGenome, cut_seed: int,
              max_fragments: int = 1_000_000) -> tuple[PromptGenome, PromptGenome]:
    cut = random.Random(cut_seed).randint(1, min(len(a.fragments), len(b.fragments)))
    return crossover_at(a, b, cut, max_fragments)


def mutate(genome: PromptGenome, rng: random.Random, library: list[str], rate: float,
           max_fragments: int) -> PromptGenome:
    fragments = list(genome.fragments)
    position = 0
    while position < len(fragments):
        if rng.random() < rate:
            op = rng.choice(("swap", "insert", "delete"))
            unused = [f for f in library if f not in fragments]
            if op == "swap" and unused:
                fragments[position] = rng.choice(unused)
            elif op == "insert" and unused and len(fragments) < max_fragments:
                position += 1
                fragments.insert(position, rng.choice(unused))
            elif op == "delete" and len(fragments) > 1:
                del fragments[position]
                continue
        position += 1
    return PromptGenome(tuple(fragments), genome.agent)


# -- fitness ------------------------------------------------------------------------

@dataclass(frozen=True)
class Champion:
    contestant: Contestant
    fitness: float


class Fitness(Protocol):
    def __call__(self, generation: int, candidates: list[Contestant],
                 champion: Champion | None) -> list[float]: ...


class JudgeFitness:
    """Judge-based fitness on a ladder anchored at the best-ever variant.

    Without a champion (first generation) a genome's fitness is its pairwise
    win rate against the other variants of the generation, using at most
    ``budget`` sampled matches. Afterwards each variant plays the champion
    and scores ``champion.fitness + (score - 0.5)``: beating the champion is
    an improvement, a draw or a loss is not.
    """

    def __init__(self, snippet: CodeSnippet, judge: str, run: UnitRun, prompts: PromptSet,
                 budget: int, seed: int) -> None:
        self.snippet = snippet
        self.judge = judge
        self.run = run
        self.prompts = prompts
        self.budget = budget
        self.seed = seed
        self.matches = 0

    def _play(self, generation: int, a: Contestant, b: Contestant, tag: str) -> float | None:
        self.matches += 1
        return judge_pair(self.snippet, a, b, self.judge, run=self.run, prompts=self.prompts,
                          seed=derive_seed(self.seed, "fitness", generation, tag)).score_a

    def __call__(self, generation: int, candidates: list[Contestant],
                 champion: Champion | None) -> list[float]:
        if champion is None:
            pairs = list(itertools.combinations(range(len(candidates)), 2))
            if len(pairs) > self.budget:
                rng = random.Random(derive_seed(self.seed, "sample", generation))
                pairs = sorted(rng.sample(pairs, self.budget))
            scores: list[list[float]] = [[] for _ in candidates]
            for i, j in pairs:
                score = self._play(generation, candidates[i], candidates[j], f"{i}-{j}")
                if score is None:
                    continue
                scores[i].append(score)
                scores[j].append(1.0 - score)
            return [math.fsum(s) / len(s) if s else 0.5 for s in scores]

        out = []
        for i, candidate in enumerate(candidates):
            if i >= self.budget:
                out.append(champion.fitness - 0.5)
                continue
            score = self._play(generation, candidate, champion.contestant, f"{i}-champion")
            out.append(champion.fitness + ((score if score is not None else 0.0) - 0.5))
        return out


# -- main loop ------------------------------------------------------------------------

@dataclass
class GenerationRecord:
    generation: int
    genomes: list[dict]
    best_ever_fitness: float
    improved: bool


@dataclass
class GAResult:
    variant: OptimizationVariant
    best_genome: PromptGenome
    history: list[GenerationRecord] = field(default_factory=list)
    stop_reason: str = ""

    @property
    def generations(self) -> int:
        return len(self.history)


def initial_population(params: GAParams, proposers: tuple[str, ...], library: list[str],
                       rng: random.Random) -> list[PromptGenome]:
    population = []
    for i in range(params.population):
        k = rng.randint(1, min(params.max_fragments, len(library)))
        population.append(PromptGenome(tuple(rng.sample(library, k)), proposers[i % len(proposers)]))
    return population


def _select(population: list[PromptGenome], fitness: list[float], rng: random.Random,
            size: int) -> PromptGenome:
    picks = rng.sample(range(len(population)), min(size, len(population)))
    best = max(picks, key=lambda i: (fitness[i], -picks.index(i)))
    return population[best]


def next_generation(population: list[PromptGenome], fitness: list[float], params: GAParams,
                    proposers: tuple[str, ...], library: list[str],
                    rng: random.Random) -> list[PromptGenome]:
    children: list[PromptGenome] = []
    while len(children) < params.population:
        a = _select(population, fitness, rng, params.tournament_size)
        b = _select(population, fitness, rng, params.tournament_size)
        if rng.random() < params.crossover_rate:
            a, b = crossover(a, b, rng.getrandbits(32), params.max_fragments)
        for child in (a, b):
            children.append(mutate(child, rng, library, params.mutation_rate, params.max_fragments))
    # proposers stay balanced: child i is written by proposer i mod P
    return [PromptGenome(c.fragments, proposers[i % len(proposers)])
            for i, c in enumerate(children[:params.population])]


def optimize_ga(snippet: CodeSnippet, combination: Combination, params: GAParams,
                repetition_index: int, seed: int, *, gateway: Gateway, prompts: PromptSet,
                fragments: list[Fragment], judge: str,
                fitness: Fitness | None = None) -> GAResult:
    key = UnitKey(snippet.id, str(GA), combination.id, repetition_index)
    run = UnitRun(gateway, key)
    by_id = {f.id: f for f in fragments}
    library = [f.id for f in fragments]
    rng = random.Random(derive_seed(seed, "ga", params.seed))
    fitness = fitness or JudgeFitness(snippet, judge, run, prompts,
                                      params.matches_per_generation, derive_seed(seed, "ga-judge"))
    population = initial_population(params, combination.proposers, library, rng)

    champion: Champion | None = None
    champion_genome: PromptGenome | None = None
    champion_content = ""
    history: list[GenerationRecord] = []
    stall = 0
    stop_reason = "max_generations"

    for generation in range(1, params.max_generations + 1):
        contents: list[str | None] = []
        for i, genome in enumerate(population):
            prompt = prompts.ga(snippet, [by_id[f] for f in genome.fragments])
            reply = run.prompt(genome.agent, prompt, role=f"ga_generation_{generation}",
                               seed=derive_seed(seed, "ga", generation, i))
            try:
                contents.append(extract_code_block(reply) if reply is not None else None)
            except EmptyVariant:
                contents.append(None)
        alive = [i for i, c in enumerate(contents) if c is not None]
        if not alive:
            raise EngineFailure(f"generation_{generation}_failed", run.trace)

        candidates = [Contestant(content_sha(contents[i]), contents[i]) for i in alive]
        scored = fitness(generation, candidates, champion)
        values = [-math.inf] * len(population)
        for i, value in zip(alive, scored):
            values[i] = value

        top = max(alive, key=lambda i: (values[i], -i))
        improved = champion is None or values[top] > champion.fitness
        if improved:
            champion = Champion(Contestant(content_sha(contents[top]), contents[top]), values[top])
            champion_genome = population[top]
            champion_content = contents[top]
            stall = 0
        else:
            stall += 1
        history.append(GenerationRecord(
            generation=generation,
            genomes=[{"fragments": list(g.fragments), "agent": g.agent,
                      "fitness": None if values[i] == -math.inf else values[i]}
                     for i, g in enumerate(population)],
            best_ever_fitness=champion.fitness,
            improved=improved,
        ))
        logger.debug("%s generation %d best-ever %.3f", key, generation, champion.fitness)
        if stall >= params.stall_generations:
            stop_reason = "stall"
            break
        if generation < params.max_generations:
            population = next_generation(population, values, params, combination.proposers, library, rng)

    variant = run.variant(key, champion_content, details={
        "generations": len(history),
        "stop_reason": stop_reason,
        "best_genome": {"fragments": list(champion_genome.fragments), "agent": champion_genome.agent},
        "best_ever_fitness": [h.best_ever_fitness for h in history],
    })
    return GAResult(variant, champion_genome, history, stop_reason)
