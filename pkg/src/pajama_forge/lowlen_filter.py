"""Low-length document filtering with per-source exemptions and filter rates."""

from __future__ import annotations

import json
import logging
import os
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path

from .corpus_io import CorpusManifest, Document, ManifestWriter, Report, iter_tagged
from .errors import CorpusError
from .normalize import normalize_for_filter

log = logging.getLogger(__name__)

FILTER_RATE_COLUMN = "Document filter rate"


@dataclass(frozen=True)
class FilterPolicy:
    """Drop documents shorter than ``min_chars`` normalized characters.

    Sources listed in ``exempt_sources`` are never filtered. Matching is
    case-insensitive so ``GitHub`` and ``Github`` name the same source.
    """

    min_chars: int = 200
    exempt_sources: frozenset[str] = frozenset({"Books", "Github"})

    def __post_init__(self):
        if self.min_chars < 0:
            raise ValueError("min_chars must be >= 0")
        object.__setattr__(self, "exempt_sources", frozenset(self.exempt_sources))
        object.__setattr__(self, "_exempt_folded", frozenset(s.casefold() for s in self.exempt_sources))

    def is_exempt(self, source: str) -> bool:
        return source.casefold() in self._exempt_folded

    @classmethod
    def load(cls, path: str | os.PathLike) -> "FilterPolicy":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}: policy is not valid JSON") from exc
        kwargs = {}
        if "min_chars" in data:
            kwargs["min_chars"] = int(data["min_chars"])
        if "exempt_sources" in data:
            kwargs["exempt_sources"] = frozenset(data["exempt_sources"])
        try:
            return cls(**kwargs)
        except ValueError as exc:
            raise CorpusError(f"{path}: {exc}") from exc


def should_keep(doc: Document, policy: FilterPolicy) -> bool:
    if policy.is_exempt(doc.source):
        return True
    return normalize_for_filter(doc.text).char_len >= policy.min_chars


@dataclass
class FilterReport:
    kept: dict[str, int] = field(default_factory=dict)
    dropped: dict[str, int] = field(default_factory=dict)

    def record(self, source: str, keep: bool) -> None:
        self.kept.setdefault(source, 0)
        self.dropped.setdefault(source, 0)
        if keep:
            self.kept[source] += 1
        else:
            self.dropped[source] += 1

    def merge(self, other: "FilterReport") -> None:
        for source in other.kept:
            self.kept[source] = self.kept.get(source, 0) + other.kept[source]
            self.dropped[source] = self.dropped.get(source, 0) + other.dropped[source]

    @property
    def sources(self) -> list[str]:
        return list(self.kept)

    def rate(self, source: str) -> float:
        total = self.kept[source] + self.dropped[source]
        return self.dropped[source] / total if total else 0.0

    @property
    def total_rate(self) -> float:
        total = sum(self.kept.values()) + sum(self.dropped.values())
        return sum(self.dropped.values()) / total if total else 0.0

    def to_report(self) -> Report:
        report = Report((FILTER_RATE_COLUMN,))
        for source in self.sources:
            report.add(source, self.rate(source))
        if self.sources:
            report.add("Total", self.total_rate)
        return report


def filter_documents(
    docs: Iterable[Document], policy: FilterPolicy, report: FilterReport | None = None
) -> Iterator[Document]:
    """Lazily yield kept documents, tallying decisions into ``report``."""
    report = report if report is not None else FilterReport()
    for doc in docs:
        keep = should_keep(doc, policy)
        report.record(doc.source, keep)
        if keep:
            yield doc


def filter_corpus(
    manifest: CorpusManifest, policy: FilterPolicy, out_dir: str | os.PathLike
) -> tuple[CorpusManifest, FilterReport]:
    """Write the kept documents under ``out_dir`` and return their manifest."""
    report = FilterReport()
    with ManifestWriter(out_dir, len(manifest.shards)) as writer:
        for shard_index, doc in iter_tagged(manifest):
            keep = should_keep(doc, policy)
            report.record(doc.source, keep)
            if keep:
                writer.write(shard_index, doc)
    kept = writer.close()
    log.info("filter: dropped %.2f%% of documents", report.total_rate * 100)
    return kept, report
