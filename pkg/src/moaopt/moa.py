"""Layered Mixture-of-Agents pipeline.

Layer 1: every proposer answers the optimization task. Layers 2..L-1: every
proposer answers the task again with all candidates from all earlier layers
attached anonymously. Layer L: the aggregator synthesizes one final version.
A fully successful run therefore makes ``P * (L - 1) + 1`` calls.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from .domain import ApproachKind, ApproachTag, CodeSnippet, OptimizationVariant, UnitKey
from .gateway import EmptyVariant, Gateway, extract_code_block
from .prompts import PromptSet
from .unit import EngineFailure, UnitRun, derive_seed

logger = logging.getLogger(__name__)

MOA = ApproachTag(ApproachKind.MOA)


@dataclass(frozen=True)
class MoAPlan:
    combination_id: str
    proposers: tuple[str, ...]
    aggregator: str
    layers: int = 3

    def __post_init__(self) -> None:
        object.__setattr__(self, "proposers", tuple(self.proposers))
        if self.layers < 2:
            raise ValueError("MoA needs at least 2 layers")
        if not self.proposers:
            raise ValueError("MoA needs at least one proposer")

    @property
    def expected_calls(self) -> int:
        return len(self.proposers) * (self.layers - 1) + 1


@dataclass
class MoATrace:
    # layer index (1-based) -> [(agent name, candidate text)] in agent-index order
    layers: dict[int, list[tuple[str, str]]] = field(default_factory=dict)
    variant_id: str | None = None

    def accumulated(self, below: int) -> list[str]:
        """Candidate texts of layers 1..below-1, ordered by (layer, agent index)."""
        return [text for layer in sorted(self.layers) if layer < below for _, text in self.layers[layer]]


def _layer(run: UnitRun, plan: MoAPlan, layer: int, prompt: str, seed: int,
           workers: int) -> list[tuple[str, str]]:
    def one(index_agent: tuple[int, str]) -> tuple[str, str | None]:
        index, agent = index_agent
        reply = run.prompt(agent, prompt, role=f"proposer_layer_{layer}",
                           seed=derive_seed(seed, "moa", layer, index))
        if reply is None:
            return agent, None
        try:
            return agent, extract_code_block(reply)
        except EmptyVariant:
            return agent, None

    jobs = list(enumerate(plan.proposers))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(one, jobs))
    else:
        results = [one(job) for job in jobs]
    # pool.map preserves input order, so ordering never depends on completion order
    return [(agent, text) for agent, text in results if text is not None]


def optimize_moa(snippet: CodeSnippet, plan: MoAPlan, repetition_index: int, seed: int, *,
                 gateway: Gateway, prompts: PromptSet,
                 workers: int = 1) -> tuple[OptimizationVariant, MoATrace]:
    key = UnitKey(snippet.id, str(MOA), plan.combination_id, repetition_index)
    run = UnitRun(gateway, key)
    trace = MoATrace()

    for layer in range(1, plan.layers):
        if layer == 1:
            prompt = prompts.individual(snippet)
        else:
            prompt = prompts.refiner(snippet, trace.accumulated(layer))
        trace.layers[layer] = _layer(run, plan, layer, prompt, seed, workers)
        if not trace.accumulated(layer + 1):
            raise EngineFailure("no_candidates", run.trace)
        logger.debug("%s layer %d: %d candidates", key, layer, len(trace.layers[layer]))

    synthesis = prompts.synthesis(snippet, trace.accumulated(plan.layers))
    reply = run.prompt(plan.aggregator, synthesis, role="aggregator",
                       seed=derive_seed(seed, "moa", plan.layers, "aggregator"))
    if reply is None:
        raise EngineFailure("aggregator_failed", run.trace)
    try:
        final = extract_code_block(reply)
    except EmptyVariant:
        raise EngineFailure("empty_variant", run.trace) from None
    trace.layers[plan.layers] = [(plan.aggregator, final)]

    variant = run.variant(key, final, details={
        "layers": {str(k): [agent for agent, _ in v] for k, v in sorted(trace.layers.items())},
    })
    trace.variant_id = variant.id
    return variant, trace
