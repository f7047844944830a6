"""Risk-of-random-guessing score over per-item benchmark accuracies."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass
from typing import Literal

from .errors import PajamaForgeError

Variant = Literal["pos", "neg", "all"]
VARIANTS: tuple[Variant, ...] = ("pos", "neg", "all")


@dataclass(frozen=True)
class ScoreVector:
    items: tuple[tuple[str, float], ...]
    baseline: float = 0.25

    def __post_init__(self):
        if not self.items:
            raise ValueError("a score vector needs at least one item")
        for name, score in self.items:
            if not 0.0 <= score <= 1.0:
                raise ValueError(f"score for {name!r} is outside [0, 1]: {score}")

    @property
    def scores(self) -> list[float]:
        return [s for _, s in self.items]

    def __len__(self) -> int:
        return len(self.items)


def rrgs(v: ScoreVector, variant: Variant = "all") -> float:
    """``1 - mean |s_i - baseline|`` over the variant's items.

    ``pos`` keeps scores strictly above the baseline, ``neg`` strictly below,
    ``all`` keeps every item.
    """
    b = v.baseline
    if variant == "all":
        chosen = v.scores
    elif variant == "pos":
        chosen = [s for s in v.scores if s > b]
    elif variant == "neg":
        chosen = [s for s in v.scores if s < b]
    else:
        raise ValueError(f"unknown RRGS variant {variant!r}")
    if not chosen:
        raise ValueError(f"no items for RRGS variant {variant!r}")
    return 1.0 - math.fsum(abs(s - b) for s in chosen) / len(chosen)


def load_scores(path: str | os.PathLike, baseline: float = 0.25) -> ScoreVector:
    """Read ``item,score`` rows; a non-numeric first row is taken as a header.

    If any score exceeds 1 the whole file is read as percentages.
    """
    rows: list[tuple[str, float]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise PajamaForgeError(f"{path}:{lineno}: expected 'item,score'")
            name, raw = row[0].strip(), row[1].strip()
            try:
                score = float(raw)
            except ValueError:
                if lineno == 1:
                    continue
                raise PajamaForgeError(f"{path}:{lineno}: score {raw!r} is not a number") from None
            if not math.isfinite(score) or not 0.0 <= score <= 100.0:
                raise PajamaForgeError(f"{path}:{lineno}: score {raw} is outside [0, 100]")
            rows.append((name, score))
    if not rows:
        raise PajamaForgeError(f"{path}: no scores")
    names = [n for n, _ in rows]
    if len(set(names)) != len(names):
        dup = sorted({n for n in names if names.count(n) > 1})
        raise PajamaForgeError(f"{path}: duplicate items: {', '.join(dup)}")
    if max(s for _, s in rows) > 1.0:
        rows = [(n, s / 100.0) for n, s in rows]
    return ScoreVector(tuple(rows), baseline)
