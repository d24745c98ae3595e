"""LRU cache of one-hot encodings so repeated epochs skip re-encoding."""

import threading
from collections import OrderedDict
from typing import Any, Callable, Dict, Hashable, Optional

import numpy as np


class LRUCache:
    """Least Recently Used (LRU) cache with hit/miss accounting."""

    def __init__(self, max_size: int = 50000):
        """
        Initialize LRU cache.

        Args:
            max_size: Maximum number of entries to cache
        """
        self.max_size = max_size
        self.cache: "OrderedDict[Hashable, Any]" = OrderedDict()
        self.hits = 0
        self.misses = 0

    def get(self, key: Hashable) -> Optional[Any]:
        """
        Get cached value if present.

        Args:
            key: Cache key

        Returns:
            Cached value, or None on a miss
        """
        if key not in self.cache:
            self.misses += 1
            return None

        # Move to end (most recently used)
        self.cache.move_to_end(key)
        self.hits += 1
        return self.cache[key]

    def set(self, key: Hashable, value: Any) -> None:
        """
        Store a value, evicting the least recently used entry when full.

        Args:
            key: Cache key
            value: Value to cache
        """
        if key in self.cache:
            del self.cache[key]

        self.cache[key] = value
        self.cache.move_to_end(key)

        if len(self.cache) > self.max_size:
            self.cache.popitem(last=False)

    def clear(self) -> None:
        """Clear all cache entries and counters."""
        self.cache.clear()
        self.hits = 0
        self.misses = 0

    def size(self) -> int:
        """Get current cache size."""
        return len(self.cache)

    def stats(self) -> Dict[str, Any]:
        """Get cache statistics."""
        lookups = self.hits + self.misses
        return {
            "size": len(self.cache),
            "max_size": self.max_size,
            "hits": self.hits,
            "misses": self.misses,
            "hit_rate": self.hits / lookups if lookups else 0.0,
        }


class EncodingCache:
    """Caches encoded sequences keyed by (sequence, dtype)."""

    def __init__(self, max_size: int = 50000, enabled: bool = True):
        """
        Initialize encoding cache.

        Args:
            max_size: Maximum number of cached encodings
            enabled: Whether caching is enabled
        """
        self.enabled = enabled
        self.cache = LRUCache(max_size=max_size)
        self._lock = threading.Lock()

    def encode(self, sequence: str, dtype: type, encoder: Callable[[str, type], np.ndarray]) -> np.ndarray:
        """
        Return the encoding of ``sequence``, computing it on a miss.

        Cached arrays are marked read-only; callers must copy before mutating.
        """
        if not self.enabled:
            return encoder(sequence, dtype)

        key = (sequence, np.dtype(dtype).str)
        with self._lock:
            cached = self.cache.get(key)
        if cached is not None:
            return cached

        encoded = encoder(sequence, dtype)
        encoded.setflags(write=False)
        with self._lock:
            self.cache.set(key, encoded)
        return encoded

    def clear(self) -> None:
        self.cache.clear()

    def stats(self) -> Dict[str, Any]:
        if not self.enabled:
            return {"enabled": False}

        stats = self.cache.stats()
        stats["enabled"] = True
        return stats


# Global encoding cache instance
_encoding_cache: Optional[EncodingCache] = None


def get_encoding_cache(max_size: int = 50000, enabled: bool = True) -> EncodingCache:
    """
    Get or create the global encoding cache.

    Args:
        max_size: Maximum cache size
        enabled: Whether caching is enabled

    Returns:
        EncodingCache instance
    """
    global _encoding_cache
    if _encoding_cache is None:
        _encoding_cache = EncodingCache(max_size=max_size, enabled=enabled)
    return _encoding_cache
