"""Domain-mixture configurations and deterministic token-budget sampling plans."""

from __future__ import annotations

import heapq
import json
import math
import os
from collections.abc import Iterator, Mapping
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import PajamaForgeError

# Published tables round to 0.1%, so their columns may miss 100% by a little.
PROPORTION_SUM_TOLERANCE = 5e-3

SLIMPAJAMA_BUDGET = 330_000_000_000
LBS_BUDGET = 1_340_000_000_000

_DC_TABLE = {
    # source: (DC-1, DC-2, DC-3, DC-4, DC-5, DC-6, DC-7) in percent
    "Commoncrawl": ("100.0", "90.9", "75.8", "75.8", "75.8", "52.2", "0.0"),
    "C4": ("0.0", "0.0", "0.0", "0.0", "0.0", "26.7", "0.0"),
    "GitHub": ("0.0", "9.1", "24.2", "0.0", "9.1", "5.2", "0.0"),
    "Books": ("0.0", "0.0", "0.0", "0.0", "7.9", "4.2", "0.0"),
    "ArXiv": ("0.0", "0.0", "0.0", "0.0", "0.0", "4.6", "0.0"),
    "Wikipedia": ("0.0", "0.0", "0.0", "24.2", "7.3", "3.8", "0.0"),
    "StackExchange": ("0.0", "0.0", "0.0", "0.0", "0.0", "3.3", "0.0"),
    "RefinedWeb": ("0.0", "0.0", "0.0", "0.0", "0.0", "0.0", "100.0"),
}

_LBS_TABLE = {
    "Slimpj.Arxiv": "4",
    "Slimpj.StackExchanges": "3.2",
    "Slimpj.Github": "4.9",
    "Slimpj.Wikipedia": "7.5",
    "Slimpj.Books": "4.3",
    "Slimpj.C4": "17.6",
    "S2orc": "3",
    "Markdown": "3",
    "Slimpj.CC": "34.5",
    "Redpaj.CC (ext.)": "18",
}


def _pct(text: str) -> float:
    return float(Fraction(text) / 100)


@dataclass(frozen=True)
class MixtureConfig:
    name: str
    proportions: dict[str, float]
    budget_tokens: int
    seed: int = 0

    def __post_init__(self):
        if self.budget_tokens <= 0:
            raise ValueError("budget_tokens must be positive")
        if not self.proportions:
            raise ValueError("a mixture needs at least one source")
        if any(not 0.0 <= p <= 1.0 for p in self.proportions.values()):
            raise ValueError("proportions must lie in [0, 1]")
        total = math.fsum(self.proportions.values())
        if abs(total - 1.0) > PROPORTION_SUM_TOLERANCE:
            raise ValueError(f"proportions sum to {total}, expected 1")

    @classmethod
    def from_json(cls, data: Mapping) -> "MixtureConfig":
        try:
            return cls(
                name=str(data.get("name", "custom")),
                proportions={str(k): float(v) for k, v in data["proportions"].items()},
                budget_tokens=int(data["budget_tokens"]),
                seed=int(data.get("seed", 0)),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise PajamaForgeError(f"invalid mixture config: {exc}") from exc

    @classmethod
    def load(cls, path: str | os.PathLike) -> "MixtureConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise PajamaForgeError(f"{path}: not valid JSON") from exc
        if isinstance(data, str):
            return builtin_config(data)
        return cls.from_json(data)

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "budget_tokens": self.budget_tokens,
            "proportions": dict(self.proportions),
            "seed": self.seed,
        }


BUILTIN_NAMES = tuple(f"DC-{i}" for i in range(1, 8)) + ("LBS",)


def builtin_config(name: str, seed: int = 0) -> MixtureConfig:
    """One of the published mixtures DC-1 ... DC-7 or LBS (zero-weight sources omitted)."""
    key = name.upper()
    if key == "LBS":
        return MixtureConfig("LBS", {s: _pct(v) for s, v in _LBS_TABLE.items()}, LBS_BUDGET, seed)
    if key.startswith("DC-") and key[3:].isdigit() and 1 <= int(key[3:]) <= 7:
        col = int(key[3:]) - 1
        props = {s: _pct(row[col]) for s, row in _DC_TABLE.items() if Fraction(row[col]) > 0}
        return MixtureConfig(key, props, SLIMPAJAMA_BUDGET, seed)
    raise KeyError(f"unknown mixture {name!r}; choose from {', '.join(BUILTIN_NAMES)}")


def apportion(weights: Mapping[str, float], total: int) -> dict[str, int]:
    """Largest-remainder split of ``total`` proportional to ``weights``.

    Remainder ties go to the source listed first.
    """
    exact = {s: Fraction(w) for s, w in weights.items()}
    norm = sum(exact.values())
    quotas = {s: w / norm * total for s, w in exact.items()}
    out = {s: math.floor(q) for s, q in quotas.items()}
    left = total - sum(out.values())
    order = sorted(quotas, key=lambda s: -(quotas[s] - out[s]))
    for s in order[:left]:
        out[s] += 1
    return out


@dataclass(frozen=True)
class SourcePlan:
    source: str
    target_tokens: int
    available_tokens: int
    seed: int

    @property
    def epochs(self) -> float:
        return self.target_tokens / self.available_tokens


@dataclass(frozen=True)
class MixturePlan:
    name: str
    budget_tokens: int
    seed: int
    sources: tuple[SourcePlan, ...] = field(default_factory=tuple)

    def source(self, name: str) -> SourcePlan:
        for sp in self.sources:
            if sp.source == name:
                return sp
        raise KeyError(name)

    @property
    def targets(self) -> dict[str, int]:
        return {sp.source: sp.target_tokens for sp in self.sources}

    @property
    def epochs(self) -> dict[str, float]:
        return {sp.source: sp.epochs for sp in self.sources}

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "budget_tokens": self.budget_tokens,
            "seed": self.seed,
            "sources": [
                {
                    "source": sp.source,
                    "target_tokens": sp.target_tokens,
                    "available_tokens": sp.available_tokens,
                    "epochs": sp.epochs,
                    "seed": sp.seed,
                }
                for sp in self.sources
            ],
        }


def _source_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1, dtype=np.uint64)[0])


def build_plan(config: MixtureConfig, inventories: Mapping[str, int], seed: int | None = None) -> MixturePlan:
    """Token targets and epoch counts per source for ``config``'s budget."""
    seed = config.seed if seed is None else seed
    missing = [s for s in config.proportions if s not in inventories]
    if missing:
        raise PajamaForgeError(f"no token inventory for: {', '.join(missing)}")
    empty = [s for s in config.proportions if inventories[s] <= 0]
    if empty:
        raise PajamaForgeError(f"empty token inventory for: {', '.join(empty)}")
    targets = apportion(config.proportions, config.budget_tokens)
    sources = tuple(
        SourcePlan(s, targets[s], int(inventories[s]), _source_seed(seed, i))
        for i, s in enumerate(config.proportions)
    )
    return MixturePlan(config.name, config.budget_tokens, seed, sources)


def source_order(sp: SourcePlan, doc_tokens: Mapping[int, int]) -> list[int]:
    """Seeded permutation of the source's doc ids, cycled and cut at the token target."""
    ids = np.array(sorted(doc_tokens), dtype=np.uint64)
    perm = ids[np.random.default_rng(sp.seed).permutation(len(ids))].tolist()
    order: list[int] = []
    used = 0
    if not perm:
        return order
    while True:
        for doc_id in perm:
            n = doc_tokens[doc_id]
            if used + n > sp.target_tokens:
                return order
            order.append(doc_id)
            used += n
        if used == 0:
            return order


def materialize(plan: MixturePlan, doc_tokens: Mapping[str, Mapping[int, int]]) -> Iterator[int]:
    """Doc ids in training order, interleaving sources by proportional round-robin.

    At each step the source furthest behind its target share (emitted tokens
    divided by target tokens) emits its next document.
    """
    missing = [sp.source for sp in plan.sources if sp.source not in doc_tokens]
    if missing:
        raise PajamaForgeError(f"no per-document token counts for: {', '.join(missing)}")
    queues = []
    for rank, sp in enumerate(plan.sources):
        if sp.target_tokens <= 0:
            continue
        order = source_order(sp, doc_tokens[sp.source])
        if order:
            queues.append((sp, order, doc_tokens[sp.source]))
    heap = [(Fraction(0), rank, 0, 0) for rank in range(len(queues))]
    heapq.heapify(heap)
    while heap:
        _, rank, pos, emitted = heapq.heappop(heap)
        sp, order, tokens = queues[rank]
        doc_id = order[pos]
        yield doc_id
        emitted += tokens[doc_id]
        if pos + 1 < len(order):
            heapq.heappush(heap, (Fraction(emitted, sp.target_tokens), rank, pos + 1, emitted))


def write_order(ids: Iterator[int], path: str | os.PathLike) -> int:
    """Write doc ids as little-endian u64; returns the count."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    buf = []
    with open(path, "wb") as fh:
        for doc_id in ids:
            buf.append(doc_id)
            if len(buf) >= 1 << 16:
                fh.write(np.array(buf, dtype="<u8").tobytes())
                count += len(buf)
                buf = []
        if buf:
            fh.write(np.array(buf, dtype="<u8").tobytes())
            count += len(buf)
    return count


def read_order(path: str | os.PathLike) -> np.ndarray:
    return np.fromfile(path, dtype="<u8")
