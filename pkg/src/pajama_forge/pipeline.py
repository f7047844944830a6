"""Corpus-level stages: filter, dedup, stats, and their composition.

Output layout under ``out_dir``::

    filtered/manifest.json, filtered/shard_*.jsonl, filter_report.csv
    signatures.bin, clusters.csv, dedup/manifest.json, dedup/shard_*.jsonl, dedup_report.csv
    token_counts.json, kl_<subset>.csv
"""

from __future__ import annotations

import json
import logging
import os
from array import array
from collections.abc import Iterable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus_io import CorpusManifest, write_report
from .errors import CorpusError
from .lowlen_filter import FilterPolicy, FilterReport, filter_corpus
from .lsh_dedup import (
    DedupReport,
    DuplicateClusterSet,
    LshParams,
    SignatureStore,
    cluster,
    deduplicate,
    find_duplicate_pairs,
    find_duplicate_pairs_local,
)
from .minhash import ShingleParams, SignatureCacheWriter, shingle_hash_list, signature_matrix
from .normalize import normalize_for_dedup
from .parallel import ordered_map
from .token_stats import (
    DEFAULT_EPSILON,
    SubsetRule,
    TokenDistribution,
    count_corpus,
    subset_matrices,
    write_matrix,
)
from .tokenizer import BpeModel

log = logging.getLogger(__name__)

FILTERED_DIR = "filtered"
DEDUP_DIR = "dedup"
SIGNATURES = "signatures.bin"
CLUSTERS = "clusters.csv"
FILTER_REPORT = "filter_report.csv"
DEDUP_REPORT = "dedup_report.csv"
TOKEN_COUNTS = "token_counts.json"


def run_filter(
    manifest: CorpusManifest, policy: FilterPolicy, out_dir: str | os.PathLike
) -> tuple[CorpusManifest, FilterReport]:
    out_dir = Path(out_dir)
    kept, report = filter_corpus(manifest, policy, out_dir / FILTERED_DIR)
    write_report(report.to_report(), out_dir / FILTER_REPORT)
    return kept, report


@dataclass(frozen=True)
class _SigJob:
    n: int
    seed: int
    k: int


_sig_job: _SigJob | None = None


def _sign_batch(texts: list[str]) -> np.ndarray:
    job = _sig_job
    params = ShingleParams(job.n, job.seed)
    lists = [shingle_hash_list(normalize_for_dedup(t).text, params) for t in texts]
    return signature_matrix(lists, job.k, job.seed)


def _doc_batches(manifest: CorpusManifest, size: int, meta: dict) -> Iterable[list[str]]:
    ids, sources = meta["ids"], meta["sources"]
    labels: dict[str, int] = meta["labels"]
    texts = []
    for doc in manifest.iter_documents():
        ids.append(doc.doc_id)
        sources.append(labels.setdefault(doc.source, len(labels)))
        texts.append(doc.text)
        if len(texts) >= size:
            yield texts
            texts = []
    if texts:
        yield texts


def compute_signatures(
    manifest: CorpusManifest,
    cache_path: str | os.PathLike,
    shingle_params: ShingleParams = ShingleParams(),
    k: int = 128,
    workers: int = 1,
    batch_size: int = 2000,
) -> tuple[np.ndarray, np.ndarray, list[str]]:
    """Sign every document into the cache file.

    Returns doc ids, source codes and the source labels the codes index.
    """
    global _sig_job
    _sig_job = _SigJob(shingle_params.n, shingle_params.seed, k)
    meta = {"ids": array("Q"), "sources": array("i"), "labels": {}}
    with SignatureCacheWriter(cache_path, k, shingle_params.n, shingle_params.seed) as writer:
        start = 0
        for sigs in ordered_map(_sign_batch, _doc_batches(manifest, batch_size, meta), workers):
            writer.write(np.array(meta["ids"][start : start + len(sigs)], dtype=np.uint64), sigs)
            start += len(sigs)
    ids = np.array(meta["ids"], dtype=np.uint64)
    if len(np.unique(ids)) != len(ids):
        raise CorpusError("doc ids are not unique within the corpus")
    return ids, np.array(meta["sources"], dtype=np.int32), list(meta["labels"])


def run_dedup(
    manifest: CorpusManifest,
    out_dir: str | os.PathLike,
    shingle_params: ShingleParams = ShingleParams(),
    lsh_params: LshParams = LshParams(),
    passes: int = 1,
    workers: int = 1,
    local: bool = False,
) -> tuple[CorpusManifest, DedupReport, DuplicateClusterSet]:
    out_dir = Path(out_dir)
    cache = out_dir / SIGNATURES
    _, source_codes, _ = compute_signatures(manifest, cache, shingle_params, lsh_params.k, workers)
    store = SignatureStore.from_cache(cache)
    if local:
        pairs = find_duplicate_pairs_local(store, source_codes, lsh_params, passes)
    else:
        pairs = find_duplicate_pairs(store, lsh_params, passes)
    del store
    log.info("dedup: %d duplicate pairs", len(pairs))
    clusters = cluster(pairs)
    clusters.write_csv(out_dir / CLUSTERS)
    kept, report = deduplicate(manifest, clusters, out_dir / DEDUP_DIR)
    write_report(report.to_report(), out_dir / DEDUP_REPORT)
    log.info("dedup: byte duplication rate %.2f%%", report.total_rate * 100)
    return kept, report, clusters


def run_stats(
    manifest: CorpusManifest,
    model: BpeModel,
    out_dir: str | os.PathLike,
    rules: Sequence[SubsetRule] = tuple(SubsetRule),
    workers: int = 1,
    epsilon: float = DEFAULT_EPSILON,
) -> dict[str, TokenDistribution]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    dists = count_corpus(manifest, model, workers)
    payload = {
        "vocab_size": model.vocab_size,
        "sources": [d.to_json() for d in dists.values()],
    }
    (out_dir / TOKEN_COUNTS).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")
    if len(dists) < 2:
        log.warning("stats: %d source(s); KL matrices need at least two", len(dists))
        return dists
    labels = list(dists)
    for rule in rules:
        try:
            matrix = subset_matrices(dists, model, [rule], epsilon)[rule]
        except ValueError as exc:
            log.warning("stats: skipping %s subset: %s", rule.value, exc)
            continue
        write_matrix(labels, matrix, out_dir / f"kl_{rule.file_suffix}.csv")
    return dists


def run_pipeline(
    manifest: CorpusManifest,
    out_dir: str | os.PathLike,
    model: BpeModel,
    policy: FilterPolicy = FilterPolicy(),
    shingle_params: ShingleParams = ShingleParams(),
    lsh_params: LshParams = LshParams(),
    passes: int = 1,
    workers: int = 1,
    rules: Sequence[SubsetRule] = tuple(SubsetRule),
) -> None:
    """filter -> dedup -> stats, each stage reading the previous stage's manifest from disk."""
    out_dir = Path(out_dir)
    run_filter(manifest, policy, out_dir)
    filtered = CorpusManifest.load(out_dir / FILTERED_DIR / "manifest.json")
    run_dedup(filtered, out_dir, shingle_params, lsh_params, passes, workers)
    deduped = CorpusManifest.load(out_dir / DEDUP_DIR / "manifest.json")
    run_stats(deduped, model, out_dir, rules, workers)
