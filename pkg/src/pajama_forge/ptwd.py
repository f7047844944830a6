"""Three-phase weight-decay schedule, optionally advanced by loss plateaus.

The default schedule trains without weight decay, then applies a strong
decay (0.5), then settles on the usual 0.1, each phase taking a third of the
steps. With a :class:`PlateauTrigger`, phase changes instead fire when the
least-squares slope of the recent losses flattens out.
"""

from __future__ import annotations

import csv
import io
import json
import math
import os
from collections import deque
from collections.abc import Iterable, Sequence
from dataclasses import dataclass, field
from pathlib import Path

from .errors import PajamaForgeError


@dataclass(frozen=True)
class PlateauTrigger:
    window: int = 50
    tolerance: float = 1e-4
    min_phase_steps: int = 0
    max_phase_steps: int | None = None

    def __post_init__(self):
        if self.window < 2:
            raise ValueError("window must be >= 2")
        if self.tolerance < 0:
            raise ValueError("tolerance must be >= 0")
        if self.min_phase_steps < 0:
            raise ValueError("min_phase_steps must be >= 0")


@dataclass(frozen=True)
class PtwdSchedule:
    total_steps: int
    values: tuple[float, float, float] = (0.0, 0.5, 0.1)
    boundaries: tuple[int, int] | None = None
    plateau: PlateauTrigger | None = None

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if len(self.values) != 3 or any(v < 0 for v in self.values):
            raise ValueError("need three nonnegative phase values")
        if self.boundaries is None:
            object.__setattr__(self, "boundaries", (self.total_steps // 3, 2 * self.total_steps // 3))
        b1, b2 = self.boundaries
        if not 0 <= b1 <= b2 <= self.total_steps:
            raise ValueError(f"boundaries must satisfy 0 <= b1 <= b2 <= total_steps, got {self.boundaries}")

    @classmethod
    def from_json(cls, data: dict) -> "PtwdSchedule":
        try:
            plateau = data.get("plateau")
            return cls(
                total_steps=int(data["total_steps"]),
                values=tuple(float(v) for v in data.get("values", (0.0, 0.5, 0.1))),
                boundaries=tuple(int(b) for b in data["boundaries"]) if data.get("boundaries") else None,
                plateau=PlateauTrigger(**plateau) if plateau else None,
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise PajamaForgeError(f"invalid schedule config: {exc}") from exc

    @classmethod
    def load(cls, path: str | os.PathLike) -> "PtwdSchedule":
        try:
            return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))
        except json.JSONDecodeError as exc:
            raise PajamaForgeError(f"{path}: not valid JSON") from exc


def wd_at(sched: PtwdSchedule, step: int) -> float:
    if not 0 <= step < sched.total_steps:
        raise IndexError(f"step {step} outside [0, {sched.total_steps})")
    b1, b2 = sched.boundaries
    if step < b1:
        return sched.values[0]
    if step < b2:
        return sched.values[1]
    return sched.values[2]


def window_slope(losses: Sequence[float]) -> float:
    """Least-squares slope of ``losses`` against their index."""
    n = len(losses)
    x_mean = (n - 1) / 2
    y_mean = math.fsum(losses) / n
    num = math.fsum((i - x_mean) * (y - y_mean) for i, y in enumerate(losses))
    den = n * (n * n - 1) / 12
    return num / den


@dataclass
class PtwdState:
    """Loss-driven schedule state; feed losses in step order via :meth:`advance`."""

    sched: PtwdSchedule
    phase: int = 0
    phase_start: int = 0
    last_step: int = -1
    transitions: list[int] = field(default_factory=list)
    _recent: deque = field(default_factory=deque, repr=False)

    def advance(self, step: int, loss: float) -> float:
        """Record ``loss`` for ``step`` and return the weight decay for that step.

        A phase change fires at the step whose window first shows a slope
        above ``-tolerance``; that step already uses the new phase's value.
        """
        if not math.isfinite(loss):
            raise ValueError(f"non-finite loss {loss!r} at step {step}")
        if step <= self.last_step:
            raise ValueError("losses must be fed in increasing step order")
        self.last_step = step
        trigger = self.sched.plateau
        if trigger is None:
            return wd_at(self.sched, step)
        if not 0 <= step < self.sched.total_steps:
            raise IndexError(f"step {step} outside [0, {self.sched.total_steps})")
        if self.phase < 2:
            self._recent.append(loss)
            if len(self._recent) > trigger.window:
                self._recent.popleft()
            in_phase = step - self.phase_start + 1
            fire = False
            if trigger.max_phase_steps is not None and in_phase >= trigger.max_phase_steps:
                fire = True
            elif in_phase >= trigger.min_phase_steps and len(self._recent) == trigger.window:
                fire = window_slope(self._recent) > -trigger.tolerance
            if fire:
                self.phase += 1
                self.phase_start = step
                self.transitions.append(step)
                self._recent.clear()
        return self.sched.values[self.phase]


def advance_on_loss(state: PtwdState, step: int, loss: float) -> tuple[PtwdState, float]:
    wd = state.advance(step, loss)
    return state, wd


def schedule_table(sched: PtwdSchedule, losses: Iterable[float] | None = None) -> list[tuple[int, float]]:
    """``(step, weight_decay)`` rows for every step.

    Loss-driven schedules need ``losses``; rows stop when the losses run out.
    """
    if sched.plateau is None:
        return [(step, wd_at(sched, step)) for step in range(sched.total_steps)]
    if losses is None:
        raise PajamaForgeError("a plateau-triggered schedule needs a loss series")
    state = PtwdState(sched)
    rows = []
    for step, loss in enumerate(losses):
        if step >= sched.total_steps:
            break
        rows.append((step, state.advance(step, loss)))
    return rows


def table_csv(rows: Iterable[tuple[int, float]]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(("step", "weight_decay"))
    for step, wd in rows:
        writer.writerow((step, repr(float(wd))))
    return buf.getvalue()
