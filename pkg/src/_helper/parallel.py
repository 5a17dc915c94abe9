from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Tuple, TypeVar

T = TypeVar("T")


def chunk_bounds(count: int, chunk_size: int) -> List[Tuple[int, int]]:
    """
    Splits range(count) into ordered half-open chunks of at most chunk_size items.
    """
    if count < 1:
        raise ValueError(f"Need at least one item, got {count}.")
    if chunk_size < 1:
        raise ValueError(f"Chunk size must be >= 1, got {chunk_size}.")
    return [(lo, min(lo + chunk_size, count)) for lo in range(0, count, chunk_size)]


def map_chunks(
    worker: Callable[[int, int], T],
    count: int,
    chunk_size: int,
    threads: int = 1,
) -> List[T]:
    """
    Runs worker(lo, hi) over every chunk and returns results in chunk order.

    Results never depend on the thread count because every chunk derives its
    randomness from absolute path indices.
    """
    bounds = chunk_bounds(count, chunk_size)
    if threads <= 1 or len(bounds) == 1:
        return [worker(lo, hi) for lo, hi in bounds]
    with ThreadPoolExecutor(max_workers=min(threads, len(bounds))) as executor:
        return list(executor.map(lambda b: worker(*b), bounds))
