"""Caching service for repeated simulation requests."""
from typing import Optional, Any
from cachetools import TTLCache
import hashlib
import json
from app.config import settings


class CacheService:
    """In-memory TTL cache of estimates keyed by the full request."""

    def __init__(self):
        """Initialize cache with TTL from settings."""
        self.cache: TTLCache[str, Any] = TTLCache(
            maxsize=1000,
            ttl=settings.cache_ttl_seconds
        )
        self.enabled = settings.enable_cache

    def _generate_key(self, request: dict) -> str:
        """
        Generate a cache key from request data.
        Runs are deterministic for a fixed seed, so equal requests share a result.
        """
        cache_str = json.dumps(request, sort_keys=True, ensure_ascii=False, default=str)
        return hashlib.sha256(cache_str.encode()).hexdigest()

    def get(self, request: dict) -> Optional[Any]:
        """Retrieve cached result if available."""
        if not self.enabled:
            return None

        key = self._generate_key(request)
        return self.cache.get(key)

    def set(self, request: dict, value: Any) -> None:
        """Store result in cache."""
        if not self.enabled:
            return

        key = self._generate_key(request)
        self.cache[key] = value

    def clear(self) -> None:
        """Clear all cached entries."""
        self.cache.clear()


# Global cache instance
cache_service = CacheService()
