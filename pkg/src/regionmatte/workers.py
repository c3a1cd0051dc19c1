"""Thread fan-out helpers; ``MATTE_THREADS`` caps every pool and BLAS."""

import os
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager

from threadpoolctl import threadpool_limits

THREADS_ENV = "MATTE_THREADS"


def worker_count():
    value = os.environ.get(THREADS_ENV)
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


@contextmanager
def thread_limit(n=None):
    """Cap BLAS threads at ``n`` (default: ``MATTE_THREADS`` or all cores)."""
    with threadpool_limits(limits=n or worker_count()):
        yield


def parallel_map(fn, items, workers=None):
    """Ordered ``map`` over a thread pool; runs inline for a single worker."""
    items = list(items)
    workers = workers or worker_count()
    if workers == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
