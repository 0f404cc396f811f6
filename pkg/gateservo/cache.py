# gateservo/cache.py
#
# In-memory LRU cache for run results served by the HTTP surface.
# Runs are pure functions of their Scenario, so entries never expire;
# the cache only bounds memory. Thread-safe.

import hashlib
from collections import OrderedDict
from threading import Lock

from gateservo.config import RUN_CACHE_SIZE


class RunCache:
    """Bounded key-value cache evicting the least recently used entry when full."""

    def __init__(self, max_size: int = RUN_CACHE_SIZE):
        self._store: OrderedDict = OrderedDict()
        self._max_size = max(1, max_size)
        self._lock = Lock()
        self._hits = 0
        self._misses = 0

    def get(self, key: str):
        with self._lock:
            if key not in self._store:
                self._misses += 1
                return None
            self._store.move_to_end(key)
            self._hits += 1
            return self._store[key]

    def set(self, key: str, value) -> None:
        with self._lock:
            self._store[key] = value
            self._store.move_to_end(key)
            while len(self._store) > self._max_size:
                self._store.popitem(last=False)

    def stats(self) -> dict:
        with self._lock:
            total = self._hits + self._misses
            return {
                "size": len(self._store),
                "max_size": self._max_size,
                "hits": self._hits,
                "misses": self._misses,
                "hit_rate": round(self._hits / total, 3) if total else 0.0,
            }

    def clear(self) -> None:
        with self._lock:
            self._store.clear()
            self._hits = self._misses = 0


run_cache = RunCache()


def scenario_key(scenario_json: str) -> str:
    """Stable cache key from a scenario's canonical JSON."""
    return "run:" + hashlib.sha256(scenario_json.encode("utf-8")).hexdigest()
