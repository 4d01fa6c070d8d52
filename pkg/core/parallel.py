"""
Thread pool helper with results returned in input order.
"""

import logging
from concurrent.futures import ThreadPoolExecutor, as_completed
from typing import Callable, List, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")

logger = logging.getLogger(__name__)

DEFAULT_WORKERS = 1


def ordered_map(fn: Callable[[T], R], items: Sequence[T], max_workers: int = DEFAULT_WORKERS) -> List[R]:
    """
    Apply `fn` to every item, possibly in parallel.

    Results are placed by input index, so any reduction over the returned list
    happens in a fixed order regardless of the pool size. The first task error
    is re-raised after the pool drains.
    """
    if max_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    results: List[R] = [None] * len(items)  # type: ignore[list-item]
    errors = {}
    with ThreadPoolExecutor(max_workers=max_workers) as executor:
        futures = {executor.submit(fn, item): i for i, item in enumerate(items)}

        for future in as_completed(futures):
            index = futures[future]
            try:
                results[index] = future.result()
            except Exception as e:
                logger.debug("task %d failed: %s", index, e)
                errors[index] = e

    if errors:
        raise errors[min(errors)]
    return results
