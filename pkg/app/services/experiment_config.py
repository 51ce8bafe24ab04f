"""
Experiment configuration: a YAML file with one level of nesting, overridable
from the command line. Grammar in docs/EXPERIMENT_CONFIG.md.
"""
import logging
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Union

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from app.config import settings
from app.models.schemas import (
    MAX_SEED,
    PRESET_DISTRIBUTIONS,
    DecodeMode,
    DecodePolicy,
    DegreeDistribution,
    SearchSpec,
    TrialPlan,
    inclusive_grid,
)
from app.services.montecarlo import users_for_load
from app.services.per_model import PerTable, PerTableError, build_per_table

logger = logging.getLogger(__name__)


def resolve_distribution(text: str) -> DegreeDistribution:
    """A preset name (``irregular-123``) or ``d1:p1,d2:p2,...``."""
    preset = PRESET_DISTRIBUTIONS.get(text.strip())
    if preset is not None:
        return preset
    return DegreeDistribution.parse(text)


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PlanSection(_Section):
    n_slots: int = Field(100, ge=1)
    g: float = Field(1.0, ge=0)
    snr_db: float = 8.0
    dist: str = Field("irregular-123", description="Preset name or d1:p1,d2:p2,...")
    mode: DecodeMode = DecodeMode.MUSCA
    trials: int = Field(default_factory=lambda: settings.default_trials, ge=1)
    seed: int = Field(default_factory=lambda: settings.default_seed, ge=0, lt=MAX_SEED)
    signalling_max_interferers: int = Field(1, ge=0)
    retry_rule: Literal["on-improvement", "never"] = "on-improvement"
    ci_stop: bool = False

    @field_validator("dist")
    @classmethod
    def validate_dist(cls, v):
        resolve_distribution(v)
        return v


class PerSection(_Section):
    source: Optional[Literal["parametric", "anchors", "collision", "ideal", "files"]] = None
    tables: List[str] = Field(default_factory=list)
    erasure_threshold: Optional[int] = Field(None, ge=0)

    @field_validator("tables")
    @classmethod
    def validate_tables(cls, v):
        for path in v:
            if not Path(path).is_file():
                raise ValueError(f"PER table file not found: {path}")
        return v

    @model_validator(mode="after")
    def resolve_source(self):
        if self.tables and self.source not in (None, "files"):
            raise ValueError(f"PER tables given but source is {self.source!r}")
        if self.source == "files" and not self.tables:
            raise ValueError("source 'files' needs at least one table")
        return self

    @property
    def effective_source(self) -> str:
        if self.source is not None:
            return self.source
        return "files" if self.tables else "parametric"


class SweepSection(_Section):
    g_values: Optional[List[float]] = None
    g_start: Optional[float] = None
    g_stop: Optional[float] = None
    g_step: Optional[float] = None
    snr_values: Optional[List[float]] = None

    @model_validator(mode="after")
    def validate_grid(self):
        given = [self.g_start, self.g_stop, self.g_step]
        if any(v is not None for v in given) and not all(v is not None for v in given):
            raise ValueError("g_start, g_stop and g_step must be given together")
        if self.g_values is not None and self.g_start is not None:
            raise ValueError("Give either g_values or g_start/g_stop/g_step, not both")
        if self.g_values is not None and any(g < 0 for g in self.g_values):
            raise ValueError("Loads must be non-negative")
        return self

    def resolved_g_values(self) -> List[float]:
        if self.g_values is not None:
            return list(self.g_values)
        if self.g_start is not None:
            return list(inclusive_grid(self.g_start, self.g_stop, self.g_step))
        return []


class OptimizeSection(_Section):
    degrees: List[int] = Field(default_factory=lambda: [1, 2, 3])
    step: float = Field(0.05, gt=0, le=1)
    g_grid: Optional[List[float]] = None


class OutputSection(_Section):
    out: Optional[str] = None


class ExperimentConfig(_Section):
    """Everything a CLI run needs; every field can be overridden by a flag."""
    plan: PlanSection = Field(default_factory=PlanSection)
    per: PerSection = Field(default_factory=PerSection)
    sweep: SweepSection = Field(default_factory=SweepSection)
    optimize: OptimizeSection = Field(default_factory=OptimizeSection)
    output: OutputSection = Field(default_factory=OutputSection)

    @property
    def dist(self) -> DegreeDistribution:
        return resolve_distribution(self.plan.dist)

    @property
    def policy(self) -> DecodePolicy:
        return DecodePolicy(
            signalling_max_interferers=self.plan.signalling_max_interferers,
            retry_rule=self.plan.retry_rule,
            mode=self.plan.mode,
        )

    def trial_plan(self, g: Optional[float] = None, snr_db: Optional[float] = None) -> TrialPlan:
        """Plan at load ``g`` (default plan.g)."""
        load = self.plan.g if g is None else g
        try:
            return TrialPlan(
                n_slots=self.plan.n_slots,
                n_users=users_for_load(load, self.plan.n_slots),
                dist=self.dist,
                snr_db=self.plan.snr_db if snr_db is None else snr_db,
                trials=self.plan.trials,
                master_seed=self.plan.seed,
                policy=self.policy,
                ci_stop=self.plan.ci_stop,
                chunk_size=settings.trial_chunk_size,
            )
        except ValidationError as e:
            raise ConfigError(_format_validation(e)) from e

    def search_spec(self) -> SearchSpec:
        data: Dict[str, Any] = {
            "degrees": tuple(self.optimize.degrees),
            "step": self.optimize.step,
            "snr_db": self.plan.snr_db,
            "n_slots": self.plan.n_slots,
            "trials": self.plan.trials,
            "master_seed": self.plan.seed,
            "policy": self.policy,
        }
        if self.optimize.g_grid is not None:
            data["g_grid"] = tuple(self.optimize.g_grid)
        try:
            return SearchSpec(**data)
        except ValidationError as e:
            raise ConfigError(_format_validation(e)) from e

    def per_table(self, snr_values: Optional[List[float]] = None, max_degree: Optional[int] = None) -> PerTable:
        """Build the PER table the config names; file problems are config errors."""
        degree_cap = max_degree or max(3, self.dist.max_degree, *self.optimize.degrees)
        profiles = self.trial_plan(g=0.0).profile_map()
        code_ids = {p.code_id for p in profiles.values()} | {p.signalling_code_id for p in profiles.values()}
        code_ids |= {"turbo_r12"} | {f"turbo_r1{2 * d}" for d in range(1, degree_cap + 1)}
        try:
            return build_per_table(
                self.per.effective_source,
                snr_values=snr_values or [self.plan.snr_db],
                code_ids=sorted(code_ids),
                paths=self.per.tables,
                max_degree=degree_cap,
                erasure_threshold=self.per.erasure_threshold,
            )
        except PerTableError as e:
            raise ConfigError(str(e)) from e


def _format_validation(error: ValidationError) -> str:
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item.get("loc", ())) or "config"
        parts.append(f"{location}: {item.get('msg')}")
    return "; ".join(parts)


def load_experiment_config(path: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """Read and validate a YAML experiment file; no path gives the defaults."""
    if path is None:
        return ExperimentConfig()
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"Config file not found: {path}")
    try:
        with open(path, encoding="utf-8") as handle:
            raw = yaml.safe_load(handle) or {}
    except yaml.YAMLError as e:
        raise ConfigError(f"{path}: invalid YAML: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping of sections")
    try:
        config = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: {_format_validation(e)}") from e
    logger.info("Loaded experiment config %s", path)
    return config


# flag name -> (section, key)
OVERRIDES: Dict[str, Tuple[str, str]] = {
    "seed": ("plan", "seed"),
    "trials": ("plan", "trials"),
    "snr": ("plan", "snr_db"),
    "g": ("plan", "g"),
    "dist": ("plan", "dist"),
    "mode": ("plan", "mode"),
    "n_slots": ("plan", "n_slots"),
    "per_source": ("per", "source"),
    "per_table": ("per", "tables"),
    "g_values": ("sweep", "g_values"),
    "snr_values": ("sweep", "snr_values"),
    "degrees": ("optimize", "degrees"),
    "step": ("optimize", "step"),
    "out": ("output", "out"),
}


def apply_overrides(config: ExperimentConfig, overrides: Dict[str, Any]) -> ExperimentConfig:
    """Return ``config`` with every non-None override applied and revalidated."""
    data = config.model_dump()
    for name, value in overrides.items():
        if value is None or name not in OVERRIDES:
            continue
        section, key = OVERRIDES[name]
        data[section][key] = value
        if name == "g_values":
            data["sweep"].update(g_start=None, g_stop=None, g_step=None)
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(_format_validation(e)) from e


class ConfigError(Exception):
    """Raised for unreadable or invalid experiment configuration."""
    pass
