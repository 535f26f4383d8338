# beamcast/parallel.py

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> List[R]:
    """Maps ``fn`` over ``items`` and returns results in input order.

    Reductions downstream always run over this list, so the worker count never
    changes a number. Exceptions from a job propagate to the caller.
    """
    jobs = list(items)
    if threads <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, jobs))
