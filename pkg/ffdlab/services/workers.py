from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import psutil

T = TypeVar("T")
R = TypeVar("R")


def default_workers() -> int:
    # physical cores; numpy releases the GIL inside the heavy kernels
    return psutil.cpu_count(logical=False) or 1


def ordered_map(
    fn: Callable[[T], R], items: Iterable[T], workers: int | None = None
) -> list[R]:
    """Map ``fn`` over ``items`` on a thread pool; results keep input order.

    The first exception raised by ``fn`` propagates to the caller.
    """
    items = list(items)
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
