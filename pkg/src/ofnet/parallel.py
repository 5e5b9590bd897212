"""Thread-pool helper honouring the OFNET_THREADS cap."""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

from .exceptions import ConfigurationError


def thread_count() -> int:
    raw = os.environ.get("OFNET_THREADS", "")
    if not raw:
        return min(4, os.cpu_count() or 1)
    try:
        n = int(raw)
    except ValueError:
        raise ConfigurationError(f"OFNET_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigurationError(f"OFNET_THREADS must be >= 1, got {n}")
    return n


def parallel_map(fn, items: list) -> list:
    """Ordered map; runs serially when one thread is allowed or there is
    at most one item."""
    n = thread_count()
    if n == 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
