"""
Parallel ensembles over seeds.

Results come back in input order whatever the number of workers, so a
reduction over them is independent of the parallelism degree.
"""

import logging
from contextlib import contextmanager
from multiprocessing import Pool
from typing import Callable, Iterable, Iterator, List, Optional, TypeVar

import numpy as np

from config import settings

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def ensemble_seeds(seed: int, n: int) -> List[int]:
    """n member seeds derived from one experiment seed."""
    if n <= 0:
        return []
    state = np.random.SeedSequence(int(seed)).generate_state(n, dtype=np.uint64)
    return [int(s) for s in state]


def parallel_map(func: Callable[[T], R], items: Iterable[T], threads: Optional[int] = None) -> List[R]:
    """Order-preserving map; runs in-process when threads == 1."""
    items = list(items)
    threads = min(threads or settings.threads, max(1, len(items)))
    if threads <= 1:
        return [func(item) for item in items]
    logger.info(f"Running {len(items)} ensemble members on {threads} workers")
    chunksize = max(1, len(items) // (4 * threads))
    with Pool(processes=threads) as pool:
        return pool.map(func, items, chunksize=chunksize)


@contextmanager
def mapper(threads: Optional[int] = None) -> Iterator[Callable]:
    """Yield a map-like callable bound to a worker pool (or the builtin map)."""
    threads = threads or settings.threads
    if threads <= 1:
        yield lambda func, items: [func(item) for item in items]
        return
    with Pool(processes=threads) as pool:
        yield lambda func, items: pool.map(func, list(items))
