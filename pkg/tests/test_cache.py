"""Tests for the encoding cache."""

import numpy as np
import pytest

from pmn.cache import EncodingCache, LRUCache
from pmn.data import one_hot_array


def test_lru_eviction_order():
    """Test that the least recently used entry is evicted."""
    cache = LRUCache(max_size=2)
    cache.set("a", 1)
    cache.set("b", 2)
    assert cache.get("a") == 1
    cache.set("c", 3)
    assert cache.get("b") is None
    assert cache.get("a") == 1
    assert cache.size() == 2


def test_lru_stats():
    """Test hit/miss accounting."""
    cache = LRUCache(max_size=5)
    cache.set("a", 1)
    cache.get("a")
    cache.get("missing")
    stats = cache.stats()
    assert stats["hits"] == 1
    assert stats["misses"] == 1
    assert stats["hit_rate"] == pytest.approx(0.5)
    cache.clear()
    assert cache.stats()["hits"] == 0


def test_encoding_cache_keys_by_dtype():
    """Test that precisions are cached separately and arrays are read-only."""
    cache = EncodingCache(max_size=10)
    narrow = cache.encode("ACGT", np.float32, one_hot_array)
    wide = cache.encode("ACGT", np.float64, one_hot_array)
    assert narrow.dtype == np.float32
    assert wide.dtype == np.float64
    assert cache.encode("ACGT", np.float32, one_hot_array) is narrow
    with pytest.raises(ValueError):
        narrow[0, 0] = 5.0


def test_disabled_cache_always_encodes():
    """Test the pass-through mode."""
    cache = EncodingCache(enabled=False)
    first = cache.encode("AC", np.float32, one_hot_array)
    assert cache.encode("AC", np.float32, one_hot_array) is not first
    assert cache.stats() == {"enabled": False}
