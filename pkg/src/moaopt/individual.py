"""Single-model optimizer: one call, one variant."""

from __future__ import annotations

from .domain import ApproachKind, ApproachTag, CodeSnippet, OptimizationVariant, UnitKey
from .gateway import EmptyVariant, Gateway, extract_code_block
from .prompts import PromptSet
from .unit import EngineFailure, UnitRun, derive_seed


def optimize_individual(snippet: CodeSnippet, model: str, combination_id: str,
                        repetition_index: int, seed: int, *, gateway: Gateway,
                        prompts: PromptSet) -> OptimizationVariant:
    approach = ApproachTag(ApproachKind.INDIVIDUAL, model)
    key = UnitKey(snippet.id, str(approach), combination_id, repetition_index)
    run = UnitRun(gateway, key)
    reply = run.prompt(model, prompts.individual(snippet), role="individual",
                       seed=derive_seed(seed, "individual"))
    if reply is None:
        raise EngineFailure(run.records[-1].reason or "call_failed", run.trace)
    try:
        return run.variant(key, extract_code_block(reply))
    except EmptyVariant:
        raise EngineFailure("empty_variant", run.trace) from None
