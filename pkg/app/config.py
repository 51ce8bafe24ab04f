"""Configuration management for the simulator."""
from pydantic_settings import BaseSettings, SettingsConfigDict


class Settings(BaseSettings):
    """Application settings loaded from environment variables."""

    log_level: str = "INFO"

    # Monte Carlo execution
    # Worker processes for trial chunks (1 = run in-process)
    workers: int = 1
    # Trials per work unit; also the granularity of CI-width stopping
    trial_chunk_size: int = 500
    default_trials: int = 10_000
    default_seed: int = 20131

    # Cache Configuration
    enable_cache: bool = True
    cache_ttl_seconds: int = 3600

    # Background load sweeps
    # Grid points evaluated at once per sweep job
    sweep_max_concurrent_points: int = 2
    # Persistence: "memory" (dev) | "file" (JSON files)
    sweep_persistence_backend: str = "memory"
    # Directory for file persistence (used when sweep_persistence_backend=file)
    sweep_job_storage_path: str = "data/sweep_jobs"

    # Server Configuration
    host: str = "0.0.0.0"
    port: int = 8000

    model_config = SettingsConfigDict(
        env_file=".env",
        case_sensitive=False,
        extra="ignore"
    )

    def __init__(self, **kwargs):
        """Initialize settings and validate numeric ranges."""
        super().__init__(**kwargs)
        if self.workers < 1:
            raise ValueError("WORKERS must be >= 1")
        if self.trial_chunk_size < 1:
            raise ValueError("TRIAL_CHUNK_SIZE must be >= 1")
        if self.sweep_persistence_backend not in ("memory", "file"):
            raise ValueError(
                f"SWEEP_PERSISTENCE_BACKEND must be 'memory' or 'file', got {self.sweep_persistence_backend!r}"
            )


# Global settings instance
settings = Settings()
