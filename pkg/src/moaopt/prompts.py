"""Prompt templates and the GA instruction-fragment library.

Templates are plain UTF-8 files using :class:`string.Template` placeholders
(``${name}``). Placeholders per file:

    proposer.txt     language, snippet                (the optimization task)
    individual.txt   task
    ga.txt           task, instructions
    refiner.txt      task, candidates
    synthesis.txt    language, snippet, candidates
    judge.txt        language, snippet, candidate_1, candidate_2
    judge_reask.txt  (none)

Each run records the SHA-256 of every template file in the ledger header.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from string import Template

import yaml

from .domain import CodeSnippet, content_sha

TEMPLATE_NAMES = ("proposer", "individual", "ga", "refiner", "synthesis", "judge", "judge_reask")


def _asset_dir() -> Path:
    return Path(str(resources.files("moaopt") / "assets"))


@dataclass(frozen=True)
class Fragment:
    id: str
    text: str


def load_fragments(path: str | Path | None = None) -> list[Fragment]:
    path = Path(path) if path else _asset_dir() / "fragments.yaml"
    data = yaml.safe_load(path.read_text(encoding="utf-8"))
    fragments = [Fragment(str(f["id"]), str(f["text"])) for f in data["fragments"]]
    ids = [f.id for f in fragments]
    if len(set(ids)) != len(ids):
        raise ValueError(f"duplicate fragment ids in {path}")
    return fragments


class PromptSet:
    def __init__(self, directory: str | Path | None = None) -> None:
        directory = Path(directory) if directory else _asset_dir()
        self.sources: dict[str, str] = {}
        for name in TEMPLATE_NAMES:
            self.sources[name] = (directory / f"{name}.txt").read_text(encoding="utf-8")
        self.templates = {name: Template(src) for name, src in self.sources.items()}

    @property
    def hashes(self) -> dict[str, str]:
        return {name: content_sha(src) for name, src in sorted(self.sources.items())}

    def _render(self, name: str, **values: str) -> str:
        return self.templates[name].substitute(**values).rstrip("\n") + "\n"

    def task(self, snippet: CodeSnippet) -> str:
        return self._render("proposer", language=snippet.language_tag,
                            snippet=snippet.content.rstrip("\n"))

    def individual(self, snippet: CodeSnippet) -> str:
        return self._render("individual", task=self.task(snippet).rstrip("\n"))

    def ga(self, snippet: CodeSnippet, fragments: list[Fragment]) -> str:
        instructions = "\n".join(f"- {f.text}" for f in fragments)
        return self._render("ga", task=self.task(snippet).rstrip("\n"), instructions=instructions)

    def refiner(self, snippet: CodeSnippet, candidates: list[str]) -> str:
        return render_refiner_prompt(self, self.task(snippet), snippet.language_tag, candidates)

    def synthesis(self, snippet: CodeSnippet, candidates: list[str]) -> str:
        if not candidates:
            raise ValueError("synthesis needs at least one candidate")
        return self._render("synthesis", language=snippet.language_tag,
                            snippet=snippet.content.rstrip("\n"),
                            candidates=format_candidates(candidates, snippet.language_tag))

    def judge(self, snippet: CodeSnippet, first: str, second: str) -> str:
        return self._render("judge", language=snippet.language_tag,
                            snippet=snippet.content.rstrip("\n"),
                            candidate_1=first.rstrip("\n"), candidate_2=second.rstrip("\n"))

    def judge_reask(self) -> str:
        return self._render("judge_reask")


def format_candidates(candidates: list[str], language: str) -> str:
    """Anonymous ``### Candidate i`` sections, in the given order."""
    parts = []
    for i, text in enumerate(candidates, start=1):
        parts.append(f"### Candidate {i}\n```{language}\n{text.rstrip(chr(10))}\n```")
    return "\n\n".join(parts)


def render_refiner_prompt(prompts: PromptSet, original_prompt: str, language: str,
                          prior_candidates: list[str]) -> str:
    """Original task plus every prior candidate under an anonymous header.

    ``prior_candidates`` must already be ordered by (layer, agent index).
    """
    if not prior_candidates:
        raise ValueError("refiner prompt needs at least one prior candidate")
    return prompts._render("refiner", task=original_prompt.rstrip("\n"),
                           candidates=format_candidates(prior_candidates, language))
