"""Line-delimited JSON shards, corpus manifests, and CSV reports.

A shard holds one JSON object per line::

    {"text": "...", "meta": {"source": "Github"}, "id": 17}

``text`` is required; ``meta.source`` defaults to ``"unknown"`` and ``id`` is
derived from the shard position when absent.
"""

from __future__ import annotations

import csv
import gzip
import io
import json
import os
from collections.abc import Iterable, Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .errors import CorpusError

FORMAT_VERSION = "pajama-forge/1"
LINE_BITS = 40
MAX_SHARDS = 1 << 24
DEFAULT_SOURCE = "unknown"


@dataclass(frozen=True, slots=True)
class Document:
    doc_id: int
    source: str
    text: str
    byte_len: int

    @classmethod
    def create(cls, doc_id: int, source: str, text: str) -> "Document":
        return cls(doc_id, source, text, len(text.encode("utf-8")))


def derived_doc_id(shard_index: int, line_index: int) -> int:
    """Id for a record without an explicit ``id`` (``line_index`` is 0-based)."""
    if not 0 <= shard_index < MAX_SHARDS or not 0 <= line_index < (1 << LINE_BITS):
        raise CorpusError(f"shard {shard_index} / line {line_index} outside the id space")
    return (shard_index << LINE_BITS) | line_index


def _open_binary(path: Path):
    suffix = path.suffix.lower()
    if suffix == ".gz":
        return gzip.open(path, "rb")
    if suffix == ".zst":
        raise CorpusError(f"{path}: .zst shards are not supported; decompress first")
    return open(path, "rb")


def _parse_record(obj, path: Path, lineno: int, default_id: int) -> Document:
    if not isinstance(obj, dict):
        raise CorpusError(f"{path}:{lineno}: malformed record: expected a JSON object")
    text = obj.get("text")
    if not isinstance(text, str):
        raise CorpusError(f"{path}:{lineno}: malformed record: 'text' must be a string")
    source = DEFAULT_SOURCE
    meta = obj.get("meta")
    if meta is not None:
        if not isinstance(meta, dict):
            raise CorpusError(f"{path}:{lineno}: malformed record: 'meta' must be an object")
        source = meta.get("source", DEFAULT_SOURCE)
        if not isinstance(source, str):
            raise CorpusError(f"{path}:{lineno}: malformed record: 'meta.source' must be a string")
    doc_id = obj.get("id", default_id)
    if isinstance(doc_id, bool) or not isinstance(doc_id, int) or not 0 <= doc_id < (1 << 64):
        raise CorpusError(f"{path}:{lineno}: malformed record: 'id' must be an unsigned 64-bit integer")
    try:
        byte_len = len(text.encode("utf-8"))
    except UnicodeEncodeError as exc:
        raise CorpusError(f"{path}:{lineno}: malformed record: text holds an unpaired surrogate") from exc
    return Document(doc_id, source, text, byte_len)


def read_shard(path: str | os.PathLike, shard_index: int = 0) -> Iterator[Document]:
    """Yield the documents of one shard in file order.

    Blank lines are skipped but still count towards line numbering.
    """
    path = Path(path)
    offset = 0
    with _open_binary(path) as fh:
        for line_index, raw in enumerate(fh):
            start = offset
            offset += len(raw)
            if not raw.strip():
                continue
            try:
                line = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise CorpusError(
                    f"{path}: invalid UTF-8 at byte offset {start + exc.start} (line {line_index + 1})"
                ) from exc
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{line_index + 1}: malformed record: {exc.msg}") from exc
            yield _parse_record(obj, path, line_index + 1, derived_doc_id(shard_index, line_index))


def document_line(doc: Document) -> str:
    return json.dumps(
        {"id": doc.doc_id, "text": doc.text, "meta": {"source": doc.source}}, ensure_ascii=False
    ) + "\n"


def write_shard(docs: Iterable[Document], path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for doc in docs:
            fh.write(document_line(doc))


@dataclass
class SourceTotals:
    documents: int = 0
    bytes: int = 0

    def add(self, doc: Document) -> None:
        self.documents += 1
        self.bytes += doc.byte_len


@dataclass
class CorpusManifest:
    """Ordered shard list plus per-source document and byte totals."""

    shards: list[Path]
    sources: dict[str, SourceTotals] = field(default_factory=dict)
    version: str = FORMAT_VERSION

    @classmethod
    def scan(cls, shards: Sequence[str | os.PathLike]) -> "CorpusManifest":
        manifest = cls([Path(s) for s in shards])
        for doc in manifest.iter_documents():
            manifest.sources.setdefault(doc.source, SourceTotals()).add(doc)
        return manifest

    @classmethod
    def load(cls, path: str | os.PathLike) -> "CorpusManifest":
        path = Path(path)
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise
        except (json.JSONDecodeError, UnicodeDecodeError) as exc:
            raise CorpusError(f"{path}: manifest is not valid JSON") from exc
        if not isinstance(data, dict) or not isinstance(data.get("shards"), list):
            raise CorpusError(f"{path}: manifest needs a 'shards' list")
        version = data.get("format", FORMAT_VERSION)
        if version != FORMAT_VERSION:
            raise CorpusError(f"{path}: unsupported manifest format {version!r}")
        base = path.parent
        shards = [Path(s) if Path(s).is_absolute() else base / s for s in data["shards"]]
        sources = {
            name: SourceTotals(int(t["documents"]), int(t["bytes"]))
            for name, t in data.get("sources", {}).items()
        }
        if not sources and shards:
            return cls.scan(shards)
        return cls(shards, sources, version)

    def save(self, path: str | os.PathLike) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        base = path.parent.resolve()
        shards = []
        for shard in self.shards:
            resolved = Path(shard).resolve()
            try:
                shards.append(resolved.relative_to(base).as_posix())
            except ValueError:
                shards.append(str(resolved))
        data = {
            "format": self.version,
            "shards": shards,
            "sources": {
                name: {"documents": t.documents, "bytes": t.bytes} for name, t in self.sources.items()
            },
        }
        path.write_text(json.dumps(data, indent=2) + "\n", encoding="utf-8")

    def iter_documents(self) -> Iterator[Document]:
        for index, shard in enumerate(self.shards):
            yield from read_shard(shard, index)

    @property
    def total_documents(self) -> int:
        return sum(t.documents for t in self.sources.values())

    @property
    def total_bytes(self) -> int:
        return sum(t.bytes for t in self.sources.values())


class ManifestWriter:
    """Writes one output shard per input shard, keeping order and explicit ids."""

    def __init__(self, out_dir: str | os.PathLike, num_shards: int):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.paths = [self.out_dir / f"shard_{i:05d}.jsonl" for i in range(num_shards)]
        self.totals: dict[str, SourceTotals] = {}
        self._index = -1
        self._fh = None
        self.manifest: CorpusManifest | None = None

    def write(self, shard_index: int, doc: Document) -> None:
        if shard_index != self._index:
            self._switch(shard_index)
        self._fh.write(document_line(doc))
        self.totals.setdefault(doc.source, SourceTotals()).add(doc)

    def _switch(self, shard_index: int) -> None:
        if shard_index < self._index:
            raise ValueError("shards must be written in manifest order")
        if self._fh is not None:
            self._fh.close()
        for skipped in range(self._index + 1, shard_index):
            self.paths[skipped].write_text("", encoding="utf-8")
        self._fh = open(self.paths[shard_index], "w", encoding="utf-8", newline="\n")
        self._index = shard_index

    def close(self, manifest_name: str = "manifest.json") -> CorpusManifest:
        if self.manifest is not None:
            return self.manifest
        if self._fh is not None:
            self._fh.close()
            self._fh = None
        for skipped in range(self._index + 1, len(self.paths)):
            self.paths[skipped].write_text("", encoding="utf-8")
        self._index = len(self.paths)
        self.manifest = CorpusManifest(list(self.paths), dict(self.totals))
        self.manifest.save(self.out_dir / manifest_name)
        return self.manifest

    def __enter__(self) -> "ManifestWriter":
        return self

    def __exit__(self, exc_type, *exc) -> None:
        if exc_type is None:
            self.close()
        elif self._fh is not None:
            self._fh.close()


def iter_tagged(manifest: CorpusManifest) -> Iterator[tuple[int, Document]]:
    """Documents tagged with their shard index, in manifest order."""
    for index, shard in enumerate(manifest.shards):
        for doc in read_shard(shard, index):
            yield index, doc


@dataclass
class Report:
    """A Table-3 style report: one row per source, rates as fractions."""

    columns: tuple[str, ...]
    rows: list[tuple[str, tuple[float, ...]]] = field(default_factory=list)

    def add(self, label: str, *rates: float) -> None:
        if len(rates) != len(self.columns):
            raise ValueError(f"expected {len(self.columns)} rates, got {len(rates)}")
        self.rows.append((label, tuple(rates)))


def format_rate(rate: float) -> str:
    return f"{rate * 100:.2f}%"


def report_csv(report: Report) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("data_source", *report.columns))
    for label, rates in report.rows:
        writer.writerow((label, *(format_rate(r) for r in rates)))
    return buf.getvalue()


def write_report(report: Report, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(report_csv(report).encode("utf-8"))
