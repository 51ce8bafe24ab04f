"""Service layer: frame construction, PER model, decoder, Monte Carlo and search."""
from .per_model import PerTable
from .decoder import SICDecoder
from .cache_service import CacheService
from .sweep_job_store import SweepJobStore

__all__ = ["PerTable", "SICDecoder", "CacheService", "SweepJobStore"]
