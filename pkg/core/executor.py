# core/executor.py
# Worker pool for partition-parallel updates

from __future__ import annotations

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Dict, Iterable, List, Optional, TypeVar

from core import config

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")


class ExecutionEngine:
    """
    Shared runner for independent per-node / per-separator updates.
    One engine per worker count; tasks read a frozen snapshot and return
    their new values, so results are identical for any worker count.
    """

    _instances: Dict[int, "ExecutionEngine"] = {}
    _lock = threading.Lock()

    @staticmethod
    def instance(threads: Optional[int] = None) -> "ExecutionEngine":
        threads = max(1, int(threads or config.THREADS))
        with ExecutionEngine._lock:
            engine = ExecutionEngine._instances.get(threads)
            if engine is None:
                engine = ExecutionEngine(threads)
                ExecutionEngine._instances[threads] = engine
            return engine

    def __init__(self, threads: int = 1):
        self.threads = threads
        self._pool: Optional[ThreadPoolExecutor] = None
        if threads > 1:
            self._pool = ThreadPoolExecutor(max_workers=threads, thread_name_prefix="graphot")
            logger.debug("ExecutionEngine started with %d workers", threads)

    def map_ordered(self, fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
        """Apply fn to every item; results come back in input order."""
        items = list(items)
        if self._pool is None or len(items) < 2:
            return [fn(x) for x in items]
        return list(self._pool.map(fn, items))

    def shutdown(self):
        if self._pool is not None:
            self._pool.shutdown(wait=True)
            self._pool = None
        with ExecutionEngine._lock:
            if ExecutionEngine._instances.get(self.threads) is self:
                del ExecutionEngine._instances[self.threads]
