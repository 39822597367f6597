import logging
import os
from concurrent.futures import ProcessPoolExecutor, ThreadPoolExecutor

logger = logging.getLogger(__name__)

THREADS_ENV = "DEBAYES_THREADS"


def default_workers():
    """Worker count: DEBAYES_THREADS if set, else the logical core count"""
    value = os.environ.get(THREADS_ENV)
    if value:
        try:
            workers = int(value)
        except ValueError:
            logger.warning("Ignoring non-integer %s=%r", THREADS_ENV, value)
        else:
            if workers >= 1:
                return workers
            logger.warning("Ignoring %s=%r (must be >= 1)", THREADS_ENV, value)
    return os.cpu_count() or 1


def map_ordered(func, items, workers=1, processes=False):
    """Apply func to every item and return results in input order.

    workers == 1 runs inline. Threads suit numpy-heavy work that releases the
    GIL; processes suit pure-Python loops and need a picklable func.
    """
    items = list(items)
    if workers is None:
        workers = default_workers()
    if workers <= 1 or len(items) <= 1:
        return [func(item) for item in items]

    executor_cls = ProcessPoolExecutor if processes else ThreadPoolExecutor
    with executor_cls(max_workers=min(workers, len(items))) as executor:
        return list(executor.map(func, items))
