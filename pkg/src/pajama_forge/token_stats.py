"""Per-source token-count distributions, token subsets, and KL-divergence matrices."""

from __future__ import annotations

import csv
import enum
import io
import math
import os
from collections import Counter
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .corpus_io import CorpusManifest, Document
from .parallel import ordered_map
from .tokenizer import BpeModel

DEFAULT_EPSILON = 1e-10
TOP_K = 1000
NUMERIC_OPS_CHARS = frozenset("0123456789+-−*/=%<>^")


class SubsetRule(str, enum.Enum):
    ALL = "all"
    LETTERS_ONLY = "letters_only"
    TOP1000_UNION = "top1000_union"
    NUMERIC_OPS = "numeric_ops"
    WHITESPACE = "whitespace"
    NON_ALPHANUMERIC = "non_alphanumeric"

    @property
    def file_suffix(self) -> str:
        return _SUFFIXES[self]


_SUFFIXES = {
    SubsetRule.ALL: "all",
    SubsetRule.LETTERS_ONLY: "letters",
    SubsetRule.TOP1000_UNION: "top1000",
    SubsetRule.NUMERIC_OPS: "numeric",
    SubsetRule.WHITESPACE: "whitespace",
    SubsetRule.NON_ALPHANUMERIC: "nonalnum",
}


@dataclass
class TokenDistribution:
    counts: Counter = field(default_factory=Counter)
    source: str = ""
    subset: SubsetRule = SubsetRule.ALL

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def top(self, k: int = TOP_K) -> list[int]:
        """The ``k`` most frequent ids; ties go to the lower id."""
        ranked = sorted(self.counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return [token for token, count in ranked[:k] if count > 0]

    def to_json(self) -> dict:
        return {
            "source": self.source,
            "subset": self.subset.value,
            "total": self.total,
            "counts": {str(t): c for t, c in sorted(self.counts.items())},
        }

    @classmethod
    def from_json(cls, data: Mapping) -> "TokenDistribution":
        counts = Counter({int(t): int(c) for t, c in data["counts"].items()})
        return cls(counts, data.get("source", ""), SubsetRule(data.get("subset", "all")))


def classify_surface(surface: str) -> set[SubsetRule]:
    """Character-class subsets a decoded token belongs to (besides ALL/TOP1000).

    One leading space marker is stripped first unless that empties the token.
    """
    text = surface[1:] if surface.startswith(" ") and len(surface) > 1 else surface
    if not text:
        return set()
    rules = set()
    if text.isalpha():
        rules.add(SubsetRule.LETTERS_ONLY)
    is_space = text.isspace()
    if is_space:
        rules.add(SubsetRule.WHITESPACE)
    if not is_space and not any(c.isalnum() for c in text):
        rules.add(SubsetRule.NON_ALPHANUMERIC)
    if all(c in NUMERIC_OPS_CHARS for c in text):
        rules.add(SubsetRule.NUMERIC_OPS)
    return rules


class _Classifier:
    def __init__(self, model: BpeModel):
        self.model = model
        self._memo: dict[int, frozenset] = {}

    def rules(self, token_id: int) -> frozenset:
        got = self._memo.get(token_id)
        if got is None:
            surface = self.model.surface(token_id)
            # partial UTF-8 sequences have no character class of their own
            got = frozenset(classify_surface(surface)) if surface is not None else frozenset()
            self._memo[token_id] = got
        return got


_classifiers: dict[int, _Classifier] = {}


def _classifier(model: BpeModel) -> _Classifier:
    c = _classifiers.get(id(model))
    if c is None or c.model is not model:
        c = _classifiers[id(model)] = _Classifier(model)
    return c


def top1000_union(dists: Sequence[TokenDistribution], k: int = TOP_K) -> set[int]:
    if not dists:
        raise ValueError("the top-k union needs at least one source distribution")
    ids: set[int] = set()
    for d in dists:
        ids.update(d.top(k))
    return ids


def apply_subset(
    dist: TokenDistribution,
    rule: SubsetRule | str,
    model: BpeModel,
    pool: Sequence[TokenDistribution] = (),
) -> TokenDistribution:
    """Restrict ``dist`` to the tokens selected by ``rule``.

    ``pool`` holds every loaded source; it is only consulted by the top-1000
    union rule.
    """
    rule = SubsetRule(rule)
    if rule is SubsetRule.ALL:
        return TokenDistribution(Counter(dist.counts), dist.source, rule)
    if rule is SubsetRule.TOP1000_UNION:
        keep = top1000_union(pool)
        counts = Counter({t: c for t, c in dist.counts.items() if t in keep})
        return TokenDistribution(counts, dist.source, rule)
    classify = _classifier(model)
    counts = Counter({t: c for t, c in dist.counts.items() if rule in classify.rules(t)})
    return TokenDistribution(counts, dist.source, rule)


def kl_divergence(p: TokenDistribution, q: TokenDistribution, epsilon: float = DEFAULT_EPSILON) -> float:
    """D(P || Q) in nats over the union support, with additive smoothing.

    With ``epsilon == 0`` the result is ``inf`` whenever P has mass where Q has none.
    """
    if p.subset != q.subset:
        raise ValueError(f"distributions use different subsets: {p.subset.value} vs {q.subset.value}")
    support = sorted(t for t in set(p.counts) | set(q.counts) if p.counts[t] or q.counts[t])
    if not support:
        raise ValueError("empty support after subsetting")
    p_total = p.total + epsilon * len(support)
    q_total = q.total + epsilon * len(support)
    if p_total <= 0 or q_total <= 0:
        raise ValueError("both distributions need positive mass")
    terms = []
    for t in support:
        pt = (p.counts[t] + epsilon) / p_total
        if pt == 0.0:
            continue
        qt = (q.counts[t] + epsilon) / q_total
        if qt == 0.0:
            return math.inf
        terms.append(pt * math.log(pt / qt))
    return max(math.fsum(terms), 0.0)


def kl_matrix(dists: Sequence[TokenDistribution], epsilon: float = DEFAULT_EPSILON) -> list[list[float]]:
    """``M[i][j] = D(P_i || P_j)``; rows are P, columns are Q."""
    if len(dists) < 2:
        raise ValueError("a KL matrix needs at least two sources")
    rules = {d.subset for d in dists}
    if len(rules) != 1:
        raise ValueError("all distributions must use the same subset rule")
    n = len(dists)
    return [
        [0.0 if i == j else kl_divergence(dists[i], dists[j], epsilon) for j in range(n)] for i in range(n)
    ]


def matrix_csv(labels: Sequence[str], matrix: Sequence[Sequence[float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("source", *labels))
    for label, row in zip(labels, matrix):
        writer.writerow((label, *(repr(float(v)) for v in row)))
    return buf.getvalue()


def write_matrix(labels: Sequence[str], matrix: Sequence[Sequence[float]], path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(matrix_csv(labels, matrix).encode("utf-8"))


_worker_model: BpeModel | None = None


def _count_batch(batch: list[tuple[str, str]]) -> dict[str, Counter]:
    out: dict[str, Counter] = {}
    for source, text in batch:
        out.setdefault(source, Counter()).update(_worker_model.encode(text))
    return out


def _batched(docs: Iterable[Document], size: int) -> Iterable[list[tuple[str, str]]]:
    batch = []
    for doc in docs:
        batch.append((doc.source, doc.text))
        if len(batch) >= size:
            yield batch
            batch = []
    if batch:
        yield batch


def count_documents(
    docs: Iterable[Document], model: BpeModel, workers: int = 1, batch_size: int = 2000
) -> dict[str, TokenDistribution]:
    """Token counts per source; sources appear in first-seen order."""
    global _worker_model
    _worker_model = model
    merged: dict[str, Counter] = {}
    for part in ordered_map(_count_batch, _batched(docs, batch_size), workers):
        for source, counts in part.items():
            merged.setdefault(source, Counter()).update(counts)
    return {s: TokenDistribution(c, s) for s, c in merged.items()}


def count_corpus(manifest: CorpusManifest, model: BpeModel, workers: int = 1) -> dict[str, TokenDistribution]:
    return count_documents(manifest.iter_documents(), model, workers)


def count_tokens(
    manifest: CorpusManifest, model: BpeModel, source: str, workers: int = 1
) -> TokenDistribution:
    docs = (d for d in manifest.iter_documents() if d.source == source)
    return count_documents(docs, model, workers).get(source, TokenDistribution(Counter(), source))


def subset_matrices(
    dists: Mapping[str, TokenDistribution],
    model: BpeModel,
    rules: Iterable[SubsetRule] = tuple(SubsetRule),
    epsilon: float = DEFAULT_EPSILON,
) -> dict[SubsetRule, list[list[float]]]:
    pool = list(dists.values())
    out = {}
    for rule in rules:
        restricted = [apply_subset(d, rule, model, pool) for d in pool]
        out[rule] = kl_matrix(restricted, epsilon)
    return out
