"""Shared helpers: chunked index ranges and an order-preserving thread map."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterator, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def chunk_ranges(total: int, chunk: int) -> Iterator[tuple[int, int]]:
    """Yield (start, stop) covering range(total) in blocks of size chunk."""
    if chunk <= 0:
        raise ValueError("chunk size must be positive")
    for start in range(0, total, chunk):
        yield start, min(start + chunk, total)


def ordered_map(fn: Callable[[T], R], tasks: Sequence[T], threads: int = 1) -> list[R]:
    """Map fn over tasks, returning results in task order.

    With threads > 1 the tasks run on a thread pool; results are still
    reduced in task order, so any deterministic per-task seeding gives
    output independent of the thread count.
    """
    if threads <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, tasks))
