"""Banded LSH over MinHash signatures, duplicate clustering, byte-rate reports.

Peak memory of :func:`find_duplicate_pairs` is dominated by the bucket keys
of the bands processed in one pass: ``O(N * ceil(bands / passes))`` words.
"""

from __future__ import annotations

import logging
import math
import os
from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus_io import CorpusManifest, ManifestWriter, Report, iter_tagged
from .errors import CorpusError, ParamsMismatchError
from .minhash import (
    CACHE_HEADER_SIZE,
    MinHashSignature,
    ShingleParams,
    mix64,
    read_cache_header,
    record_dtype,
    shingles,
)
from .normalize import normalize_for_dedup

log = logging.getLogger(__name__)

BYTE_RATE_COLUMN = "Byte duplication rate"


@dataclass(frozen=True)
class LshParams:
    bands: int = 16
    rows: int = 8
    threshold: float = 0.8

    def __post_init__(self):
        if self.bands < 1 or self.rows < 1:
            raise ValueError("bands and rows must be >= 1")
        if not 0.0 < self.threshold <= 1.0:
            raise ValueError("threshold must lie in (0, 1]")

    @property
    def k(self) -> int:
        return self.bands * self.rows

    @property
    def min_matches(self) -> int:
        """Smallest number of agreeing positions whose estimate reaches the threshold."""
        return math.ceil(self.threshold * self.k - 1e-9)

    def candidate_probability(self, similarity: float) -> float:
        return 1.0 - (1.0 - similarity**self.rows) ** self.bands


def _band_seed(band: int) -> np.uint64:
    return mix64(np.array([band + 1], dtype=np.uint64))[0]


def band_hash_columns(values: np.ndarray, params: LshParams, bands: Iterable[int]) -> np.ndarray:
    """Bucket hashes of ``values`` (shape ``(N, k)``) for the given bands, shape ``(N, len(bands))``."""
    bands = list(bands)
    r = params.rows
    out = np.empty((values.shape[0], len(bands)), dtype=np.uint64)
    with np.errstate(over="ignore"):
        for col, band in enumerate(bands):
            h = np.full(values.shape[0], _band_seed(band), dtype=np.uint64)
            for j in range(band * r, (band + 1) * r):
                h = mix64(h ^ values[:, j])
            out[:, col] = h
    return out


def band_keys(sig: MinHashSignature, params: LshParams) -> list[tuple[int, int]]:
    if sig.k != params.k:
        raise ParamsMismatchError(f"signature has k={sig.k}, bands x rows = {params.k}")
    hashes = band_hash_columns(sig.values[None, :], params, range(params.bands))[0]
    return [(band, int(h)) for band, h in enumerate(hashes)]


def _row_hashes(values: np.ndarray) -> np.ndarray:
    h = np.zeros(values.shape[0], dtype=np.uint64)
    with np.errstate(over="ignore"):
        for j in range(values.shape[1]):
            h = mix64(h ^ values[:, j])
    return h


class SignatureStore:
    """Random and sequential access to ``(doc_id, signature)`` rows.

    Backed either by in-memory arrays or by a signature cache file, which is
    read in chunks so only the rows being processed are resident.
    """

    def __init__(self, ids: np.ndarray, k: int, seed: int, values: np.ndarray | None = None,
                 path: Path | None = None):
        self.ids = ids
        self.k = k
        self.seed = seed
        self._values = values
        self._path = path
        self._dtype = record_dtype(k)

    @classmethod
    def from_arrays(cls, ids, values, seed: int = 0) -> "SignatureStore":
        values = np.ascontiguousarray(values, dtype=np.uint64)
        ids = np.asarray(ids, dtype=np.uint64)
        if values.ndim != 2 or len(ids) != values.shape[0]:
            raise ValueError("values must be (N, k) with one id per row")
        return cls(ids, values.shape[1], seed, values=values)

    @classmethod
    def from_signatures(cls, ids, sigs: Iterable[MinHashSignature]) -> "SignatureStore":
        sigs = list(sigs)
        if not sigs:
            return cls.from_arrays(np.empty(0, np.uint64), np.empty((0, 0), np.uint64))
        fps = {s.fingerprint for s in sigs}
        if len(fps) != 1:
            raise ParamsMismatchError(f"mixed signature params: {sorted(fps)}")
        return cls.from_arrays(ids, np.stack([s.values for s in sigs]), sigs[0].seed)

    @classmethod
    def from_cache(cls, path: str | os.PathLike) -> "SignatureStore":
        header, count = read_cache_header(path)
        store = cls(np.empty(count, dtype=np.uint64), header.k, header.seed, path=Path(path))
        # ids are gathered chunk by chunk so the signature body is never fully resident
        for start, rec in store._iter_records():
            store.ids[start : start + len(rec)] = rec["doc_id"]
        store.shingle_n = header.n
        return store

    def __len__(self) -> int:
        return len(self.ids)

    def iter_chunks(self, chunk: int = 1 << 14) -> Iterator[tuple[int, np.ndarray]]:
        if self._values is not None:
            for start in range(0, len(self), chunk):
                yield start, self._values[start : start + chunk]
            return
        for start, rec in self._iter_records(chunk):
            yield start, rec["values"]

    def _iter_records(self, chunk: int = 1 << 14) -> Iterator[tuple[int, np.ndarray]]:
        with open(self._path, "rb") as fh:
            fh.seek(CACHE_HEADER_SIZE)
            start = 0
            while start < len(self):
                rec = np.fromfile(fh, dtype=self._dtype, count=min(chunk, len(self) - start))
                if len(rec) == 0:
                    raise ParamsMismatchError(f"{self._path}: signature cache shrank while reading")
                yield start, rec
                start += len(rec)

    def rows(self, index: np.ndarray) -> np.ndarray:
        if self._values is not None:
            return self._values[index]
        out = np.empty((len(index), self.k), dtype=np.uint64)
        size = self._dtype.itemsize
        with open(self._path, "rb") as fh:
            for i, row in enumerate(index):
                fh.seek(CACHE_HEADER_SIZE + int(row) * size)
                out[i] = np.frombuffer(fh.read(size), dtype=self._dtype)["values"][0]
        return out

    def subset(self, index: np.ndarray) -> "SignatureStore":
        return SignatureStore(self.ids[index], self.k, self.seed, values=self.rows(index))


def _group_bounds(sorted_keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start/end positions of runs of equal keys that have at least two members."""
    if len(sorted_keys) < 2:
        empty = np.empty(0, dtype=np.intp)
        return empty, empty
    change = np.flatnonzero(sorted_keys[1:] != sorted_keys[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [len(sorted_keys)]))
    multi = (ends - starts) >= 2
    return starts[multi], ends[multi]


def _bucket_pairs(order: np.ndarray, starts: np.ndarray, ends: np.ndarray) -> np.ndarray:
    """All within-bucket index pairs ``(i, j)`` with ``i < j``."""
    sizes = ends - starts
    two = sizes == 2
    a = order[starts[two]]
    b = order[starts[two] + 1]
    parts = [np.stack((np.minimum(a, b), np.maximum(a, b)), axis=1)]
    for s, e in zip(starts[~two], ends[~two]):
        members = np.sort(order[s:e])
        i, j = np.triu_indices(len(members), 1)
        parts.append(np.stack((members[i], members[j]), axis=1))
    return np.concatenate(parts) if parts else np.empty((0, 2), dtype=np.intp)


def _collapse_identical(store: SignatureStore, chunk: int) -> tuple[np.ndarray, np.ndarray]:
    """Pick one row per distinct signature.

    Returns the kept row indices and star pairs (kept row, identical row) for
    every collapsed row.
    """
    n = len(store)
    hashes = np.empty(n, dtype=np.uint64)
    for start, values in store.iter_chunks(chunk):
        hashes[start : start + len(values)] = _row_hashes(values)
    order = np.lexsort((store.ids, hashes))
    starts, ends = _group_bounds(hashes[order])
    drop = np.zeros(n, dtype=bool)
    stars = []
    for s, e in zip(starts, ends):
        members = order[s:e]
        rows = store.rows(members)
        # hash collisions between different signatures are resolved by exact comparison
        remaining = np.ones(len(members), dtype=bool)
        for i in range(len(members)):
            if not remaining[i]:
                continue
            same = remaining & np.all(rows == rows[i], axis=1)
            same[i] = False
            for j in np.flatnonzero(same):
                stars.append((members[i], members[j]))
                drop[members[j]] = True
            remaining &= ~same
            remaining[i] = False
    keep = np.flatnonzero(~drop)
    star_pairs = np.array(stars, dtype=np.intp).reshape(-1, 2)
    return keep, star_pairs


def _as_id_pairs(ids: np.ndarray, index_pairs: np.ndarray) -> np.ndarray:
    a = ids[index_pairs[:, 0]]
    b = ids[index_pairs[:, 1]]
    return np.stack((np.minimum(a, b), np.maximum(a, b)), axis=1)


def find_duplicate_pairs(
    store: SignatureStore, params: LshParams = LshParams(), passes: int = 1, chunk: int = 1 << 14
) -> np.ndarray:
    """Doc-id pairs ``(a, b)``, ``a < b``, whose signature estimate reaches the threshold.

    Rows with identical signatures are linked to one kept row instead of to
    each other, which yields the same connected components with far fewer
    pairs. Candidates from banding are always verified against the estimate.
    The result is sorted and independent of ``passes``.
    """
    if store.k != params.k:
        raise ParamsMismatchError(f"signatures have k={store.k}, bands x rows = {params.k}")
    if passes < 1:
        raise ValueError("passes must be >= 1")
    if len(store) < 2:
        return np.empty((0, 2), dtype=np.uint64)

    keep, star_pairs = _collapse_identical(store, chunk)
    keep_pos = np.full(len(store), -1, dtype=np.intp)
    keep_pos[keep] = np.arange(len(keep))
    u = len(keep)

    per_pass = math.ceil(params.bands / passes)
    seen = np.empty(0, dtype=np.int64)
    verified = []
    for p in range(passes):
        bands = range(p * per_pass, min((p + 1) * per_pass, params.bands))
        if not len(bands):
            continue
        keys = np.empty((u, len(bands)), dtype=np.uint64)
        for start, values in store.iter_chunks(chunk):
            sel = keep_pos[start : start + len(values)]
            mask = sel >= 0
            if mask.any():
                keys[sel[mask]] = band_hash_columns(values[mask], params, bands)
        codes = []
        for col in range(len(bands)):
            order = np.argsort(keys[:, col], kind="stable")
            starts, ends = _group_bounds(keys[order, col])
            if len(starts):
                pairs = _bucket_pairs(order, starts, ends)
                codes.append(pairs[:, 0].astype(np.int64) * u + pairs[:, 1])
            del order
        del keys
        if not codes:
            continue
        fresh = np.setdiff1d(np.unique(np.concatenate(codes)), seen, assume_unique=True)
        seen = np.union1d(seen, fresh)
        log.debug("pass %d/%d: %d new candidate pairs", p + 1, passes, len(fresh))
        for lo in range(0, len(fresh), chunk):
            block = fresh[lo : lo + chunk]
            i = keep[block // u]
            j = keep[block % u]
            matches = np.count_nonzero(store.rows(i) == store.rows(j), axis=1)
            ok = matches >= params.min_matches
            verified.append(np.stack((i[ok], j[ok]), axis=1))

    index_pairs = np.concatenate([star_pairs, *verified]) if verified else star_pairs
    if len(index_pairs) == 0:
        return np.empty((0, 2), dtype=np.uint64)
    return np.unique(_as_id_pairs(store.ids, index_pairs), axis=0)


def find_duplicate_pairs_local(
    store: SignatureStore, sources: np.ndarray, params: LshParams = LshParams(), passes: int = 1
) -> np.ndarray:
    """Per-source dedup: only pairs whose members share a source label."""
    parts = []
    for label in np.unique(sources):
        sub = store.subset(np.flatnonzero(sources == label))
        parts.append(find_duplicate_pairs(sub, params, passes))
    if not parts:
        return np.empty((0, 2), dtype=np.uint64)
    return np.unique(np.concatenate(parts), axis=0)


class UnionFind:
    """Disjoint sets whose root is always the smallest member."""

    def __init__(self):
        self.parent: dict[int, int] = {}

    def find(self, x: int) -> int:
        parent = self.parent
        if x not in parent:
            parent[x] = x
            return x
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, x: int, y: int) -> None:
        rx, ry = self.find(x), self.find(y)
        if rx != ry:
            lo, hi = (rx, ry) if rx < ry else (ry, rx)
            self.parent[hi] = lo


@dataclass
class DuplicateClusterSet:
    """Partition of doc ids into near-duplicate classes.

    Only documents in clusters of two or more are stored; any other id is a
    singleton that represents itself.
    """

    representative_of: dict[int, int] = field(default_factory=dict)

    def representative(self, doc_id: int) -> int:
        return self.representative_of.get(doc_id, doc_id)

    def is_kept(self, doc_id: int) -> bool:
        return self.representative_of.get(doc_id, doc_id) == doc_id

    def clusters(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for doc_id, rep in self.representative_of.items():
            out.setdefault(rep, []).append(doc_id)
        return {rep: sorted(members) for rep, members in sorted(out.items())}

    @property
    def duplicate_count(self) -> int:
        """Number of non-representative documents."""
        return sum(1 for d, r in self.representative_of.items() if d != r)

    def write_csv(self, path: str | os.PathLike) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("doc_id,representative_id\n")
            for doc_id in sorted(self.representative_of):
                fh.write(f"{doc_id},{self.representative_of[doc_id]}\n")

    @classmethod
    def read_csv(cls, path: str | os.PathLike) -> "DuplicateClusterSet":
        mapping = {}
        with open(path, encoding="utf-8") as fh:
            header = fh.readline().strip()
            if header != "doc_id,representative_id":
                raise CorpusError(f"{path}: unexpected cluster file header {header!r}")
            for lineno, line in enumerate(fh, start=2):
                try:
                    a, b = line.strip().split(",")
                    mapping[int(a)] = int(b)
                except ValueError as exc:
                    raise CorpusError(f"{path}:{lineno}: malformed cluster row") from exc
        for doc_id, rep in mapping.items():
            if mapping.get(rep) != rep or rep > doc_id:
                raise CorpusError(f"{path}: {doc_id} -> {rep} is not a valid representative")
        return cls(mapping)


def cluster(pairs: Iterable[tuple[int, int]] | np.ndarray) -> DuplicateClusterSet:
    """Connected components of the pair graph; representative = smallest id."""
    uf = UnionFind()
    for a, b in (pairs.tolist() if isinstance(pairs, np.ndarray) else pairs):
        uf.union(int(a), int(b))
    return DuplicateClusterSet({x: uf.find(x) for x in sorted(uf.parent)})


@dataclass
class DedupReport:
    total_bytes: dict[str, int] = field(default_factory=dict)
    duplicate_bytes: dict[str, int] = field(default_factory=dict)
    duplicate_docs: dict[str, int] = field(default_factory=dict)

    def record(self, source: str, byte_len: int, duplicate: bool) -> None:
        if source not in self.total_bytes:
            self.total_bytes[source] = self.duplicate_bytes[source] = self.duplicate_docs[source] = 0
        self.total_bytes[source] += byte_len
        if duplicate:
            self.duplicate_bytes[source] += byte_len
            self.duplicate_docs[source] += 1

    def rate(self, source: str) -> float:
        total = self.total_bytes[source]
        return self.duplicate_bytes[source] / total if total else 0.0

    @property
    def total_rate(self) -> float:
        total = sum(self.total_bytes.values())
        return sum(self.duplicate_bytes.values()) / total if total else 0.0

    def to_report(self) -> Report:
        report = Report((BYTE_RATE_COLUMN,))
        for source in self.total_bytes:
            report.add(source, self.rate(source))
        if self.total_bytes:
            report.add("Total", self.total_rate)
        return report


def deduplicate(
    manifest: CorpusManifest, clusters: DuplicateClusterSet, out_dir: str | os.PathLike
) -> tuple[CorpusManifest, DedupReport]:
    """Keep exactly the cluster representatives and report duplicate bytes."""
    report = DedupReport()
    pending = set(clusters.representative_of)
    with ManifestWriter(out_dir, len(manifest.shards)) as writer:
        for shard_index, doc in iter_tagged(manifest):
            kept = clusters.is_kept(doc.doc_id)
            pending.discard(doc.doc_id)
            report.record(doc.source, doc.byte_len, not kept)
            if kept:
                writer.write(shard_index, doc)
        if pending:
            raise CorpusError(f"cluster file names {len(pending)} unknown doc ids, e.g. {min(pending)}")
    return writer.close(), report


def exact_jaccard(text_a: str, text_b: str, params: ShingleParams = ShingleParams()) -> float:
    """Exact shingle-set Jaccard of two raw texts, for auditing emitted pairs."""
    a = shingles(normalize_for_dedup(text_a), params)
    b = shingles(normalize_for_dedup(text_b), params)
    return len(a & b) / len(a | b)
