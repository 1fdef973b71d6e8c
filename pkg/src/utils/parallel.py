"""
Order-preserving worker pool and per-utterance random streams
"""
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """
    Apply ``fn`` to every item, keeping input order.

    Args:
        fn: Function to apply
        items: Work items
        threads: Worker cap; 1 runs inline

    Returns:
        List[R]: Results in the order of ``items``
    """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]

    with ThreadPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))


def utterance_rng(seed: int, utterance_id: str, step: int = 0) -> np.random.Generator:
    """Random stream derived from (seed, step, utterance id) only."""
    key = zlib.crc32(utterance_id.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(step), key]))
