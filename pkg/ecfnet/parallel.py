from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor

from ecfnet.exceptions import InvalidConfig

__all__ = [
    "THREADS_ENV",
    "ordered_map",
    "thread_count",
]

logger = logging.getLogger(__name__)

THREADS_ENV = "ECFNET_THREADS"


def thread_count():
    """Worker count from ``ECFNET_THREADS``, one when unset"""
    value = os.environ.get(THREADS_ENV, "").strip()
    if not value:
        return 1
    try:
        threads = int(value)
    except ValueError:
        threads = 0
    if threads < 1:
        raise InvalidConfig(violations=[f"{THREADS_ENV} must be a positive integer, got {value!r}"])
    return threads


def ordered_map(function, items, threads=None):
    """
    ``[function(item) for item in items]``, possibly on a thread pool.

    Results come back in input order; ``function`` must not depend on which
    worker runs it.
    """
    items = list(items)
    threads = threads or thread_count()
    if threads <= 1 or len(items) <= 1:
        return [function(item) for item in items]
    logger.debug("mapping %d items over %d threads", len(items), threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(function, items))
