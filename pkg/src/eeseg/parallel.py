"""Ordered image-level parallelism with a bounded lookahead window."""

from __future__ import annotations

from collections import deque
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Iterator, TypeVar

T = TypeVar("T")
U = TypeVar("U")


def ordered_parallel_map(fn: Callable[[T], U], items: Iterable[T], jobs: int) -> Iterator[U]:
    """Map with a thread pool, yielding results strictly in input order.

    Keeps at most 2*jobs items in flight, so streaming inputs stay streamed.
    With jobs <= 1 this is a plain sequential map. Reductions downstream see
    the same order either way, which keeps aggregate results deterministic.
    """
    if jobs <= 1:
        for item in items:
            yield fn(item)
        return
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        pending: deque = deque()
        it = iter(items)
        exhausted = False
        while True:
            while not exhausted and len(pending) < 2 * jobs:
                try:
                    pending.append(pool.submit(fn, next(it)))
                except StopIteration:
                    exhausted = True
            if not pending:
                return
            yield pending.popleft().result()
