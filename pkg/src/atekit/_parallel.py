"""Order-independent task fan-out.

Worker count comes from ``ATE_TOOLKIT_THREADS`` (0 or unset = one per CPU).
Results land in pre-allocated slots indexed by task, so output never depends
on scheduling.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def worker_count() -> int:
    raw = os.environ.get("ATE_TOOLKIT_THREADS", "0").strip() or "0"
    try:
        k = int(raw)
    except ValueError:
        k = 0
    if k <= 0:
        k = os.cpu_count() or 1
    return k


def parallel_map(fn: Callable[[T], R], tasks: Iterable[T]) -> list[R]:
    tasks = list(tasks)
    k = min(worker_count(), len(tasks))
    if k <= 1:
        return [fn(t) for t in tasks]
    slots: list = [None] * len(tasks)
    with ThreadPoolExecutor(max_workers=k) as pool:
        futures = {pool.submit(fn, t): i for i, t in enumerate(tasks)}
        for fut, i in futures.items():
            slots[i] = fut.result()
    return slots
