"""Snippet manifest loading.

A manifest is a YAML file::

    root: ../corpus          # optional, relative to the manifest; default "."
    snippets:
      - path: pkg/util.py    # relative to root
        start_line: 10       # 1-based, inclusive
        end_line: 24         # inclusive
        language: python     # free-form tag

Each entry yields one :class:`CodeSnippet` whose content is the exact text of
the selected lines (including their trailing newlines).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .domain import CodeSnippet, DomainError

logger = logging.getLogger(__name__)


@dataclass
class ManifestResult:
    snippets: list[CodeSnippet] = field(default_factory=list)
    errors: list[str] = field(default_factory=list)
    duplicates: list[str] = field(default_factory=list)


def read_span(path: Path, start: int, end: int) -> str:
    # newline="" keeps CRLF endings so the content (and its id) stay byte-exact
    with open(path, encoding="utf-8", newline="") as fh:
        lines = fh.readlines()
    if start < 1 or end < start:
        raise DomainError(f"invalid span {start}..{end}")
    if end > len(lines):
        raise DomainError(f"span {start}..{end} exceeds file length ({len(lines)} lines)")
    return "".join(lines[start - 1:end])


def load_manifest(manifest_path: str | Path) -> ManifestResult:
    manifest_path = Path(manifest_path)
    data = yaml.safe_load(manifest_path.read_text(encoding="utf-8")) or {}
    root = (manifest_path.parent / data.get("root", ".")).resolve()
    result = ManifestResult()
    seen: set[str] = set()
    for index, entry in enumerate(data.get("snippets") or [], start=1):
        where = f"entry {index}"
        try:
            rel = str(entry["path"])
            start, end = int(entry["start_line"]), int(entry["end_line"])
            where = f"entry {index} ({rel}:{start}-{end})"
            content = read_span(root / rel, start, end)
            snippet = CodeSnippet(
                source_path=rel,
                language_tag=str(entry.get("language", "")),
                content=content,
                line_span=(start, end),
            )
        except (KeyError, TypeError, ValueError, OSError) as exc:
            result.errors.append(f"{where}: {exc}")
            continue
        if snippet.id in seen:
            result.duplicates.append(f"{where}: duplicate of an earlier entry")
            logger.warning("duplicate manifest %s", where)
            continue
        seen.add(snippet.id)
        result.snippets.append(snippet)
    return result
