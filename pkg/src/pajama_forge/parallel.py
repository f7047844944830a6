from __future__ import annotations

import multiprocessing
from collections import deque
from collections.abc import Callable, Iterable, Iterator
from concurrent.futures import ProcessPoolExecutor
from typing import TypeVar

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1, window: int | None = None) -> Iterator[R]:
    """``map`` over worker processes, yielding results in input order.

    At most ``window`` items are in flight, so memory stays bounded for long
    streams. ``fn`` must be a module-level function; state it reads from
    module globals is inherited by forked workers.
    """
    if workers <= 1:
        yield from map(fn, items)
        return
    window = window or 2 * workers
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        pending: deque = deque()
        for item in items:
            pending.append(pool.submit(fn, item))
            if len(pending) >= window:
                yield pending.popleft().result()
        while pending:
            yield pending.popleft().result()
