"""Pydantic models: validated domain types, experiment plans, results and API bodies."""
import math
from enum import Enum
from fractions import Fraction
from typing import Annotated, Any, Dict, List, Literal, Optional, Tuple

from pydantic import (
    BaseModel,
    BeforeValidator,
    ConfigDict,
    Field,
    PlainSerializer,
    WithJsonSchema,
    field_validator,
    model_validator,
)

# Degree cap of the default MuSCA profile family (signalling grows with degree).
DEFAULT_MAX_DEGREE = 3
DEFAULT_INFO_BITS = 456
DEFAULT_MODULATION_ORDER = 4
SIGNALLING_CODE_ID = "rm_14_64"
SIGNALLING_RATE = Fraction(14, 64)
REPLICA_CODE_ID = "turbo_r12"
MAX_SEED = 2**64


def _to_fraction(value: Any) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(value).limit_denominator(10**6)
    return Fraction(value)


Rational = Annotated[
    Fraction,
    BeforeValidator(_to_fraction),
    PlainSerializer(str, return_type=str),
    WithJsonSchema({"type": "string", "examples": ["1/6"]}),
]


def inclusive_grid(start: float, stop: float, step: float) -> Tuple[float, ...]:
    """Evenly spaced values from start to stop inclusive, rounded to 10 decimals."""
    if step <= 0:
        raise ValueError("Grid step must be positive")
    if stop < start:
        raise ValueError("Grid stop must not precede start")
    count = int(math.floor((stop - start) / step + 1e-9)) + 1
    return tuple(round(start + i * step, 10) for i in range(count))


def code_id_for_rate(data_rate: Fraction) -> str:
    """PER table key of a turbo code, e.g. 1/6 -> ``turbo_r16``."""
    return f"turbo_r{data_rate.numerator}{data_rate.denominator}"


class DegreeDistribution(BaseModel):
    """Probability mass over user degrees, Lambda(x) = sum P(d) x^d."""
    model_config = ConfigDict(frozen=True)

    entries: Tuple[Tuple[int, float], ...] = Field(
        ...,
        description="(degree, probability) pairs sorted by degree",
    )

    @field_validator("entries", mode="before")
    @classmethod
    def coerce_entries(cls, v):
        """Accept a {degree: probability} mapping as well as pairs."""
        if isinstance(v, dict):
            v = [(int(d), float(p)) for d, p in v.items()]
        return tuple(sorted((int(d), float(p)) for d, p in v))

    @field_validator("entries")
    @classmethod
    def validate_entries(cls, v):
        if not v:
            raise ValueError("A degree distribution needs at least one degree")
        degrees = [d for d, _ in v]
        if len(set(degrees)) != len(degrees):
            raise ValueError(f"Duplicate degrees in {degrees}")
        if any(d < 1 for d in degrees):
            raise ValueError("Degrees must be >= 1")
        if any(p < 0 or p > 1 for _, p in v):
            raise ValueError("Probabilities must lie in [0, 1]")
        total = math.fsum(p for _, p in v)
        if abs(total - 1.0) > 1e-9:
            raise ValueError(f"Probabilities sum to {total!r}, expected 1")
        return v

    @classmethod
    def parse(cls, text: str) -> "DegreeDistribution":
        """Parse ``"1:0.1,2:0.3,3:0.6"``."""
        pairs = []
        for item in text.split(","):
            if not item.strip():
                continue
            degree, _, prob = item.partition(":")
            if not prob:
                raise ValueError(f"Expected degree:probability, got {item!r}")
            pairs.append((int(degree), float(prob)))
        return cls(entries=pairs)

    @classmethod
    def regular(cls, degree: int) -> "DegreeDistribution":
        return cls(entries=[(degree, 1.0)])

    @property
    def degrees(self) -> Tuple[int, ...]:
        return tuple(d for d, _ in self.entries)

    @property
    def probabilities(self) -> Tuple[float, ...]:
        return tuple(p for _, p in self.entries)

    @property
    def support(self) -> Tuple[int, ...]:
        return tuple(d for d, p in self.entries if p > 0)

    @property
    def max_degree(self) -> int:
        return max(self.support)

    @property
    def mean_degree(self) -> float:
        return math.fsum(d * p for d, p in self.entries)

    def probability(self, degree: int) -> float:
        return dict(self.entries).get(degree, 0.0)

    def label(self) -> str:
        """Polynomial form, e.g. ``0.1x + 0.3x^2 + 0.6x^3``."""
        terms = []
        for d, p in self.entries:
            if p == 0:
                continue
            coef = "" if p == 1 else f"{p:g}"
            power = "x" if d == 1 else f"x^{d}"
            terms.append(f"{coef}{power}")
        return " + ".join(terms)

    def to_field(self) -> str:
        return ",".join(f"{d}:{p:g}" for d, p in self.entries)


# Presets used by the compare subcommand and the acceptance checks.
PRESET_DISTRIBUTIONS: Dict[str, DegreeDistribution] = {
    "slotted-aloha": DegreeDistribution(entries=[(1, 1.0)]),
    "regular-2": DegreeDistribution(entries=[(2, 1.0)]),
    "regular-3": DegreeDistribution(entries=[(3, 1.0)]),
    "irregular-23": DegreeDistribution(entries=[(2, 0.7), (3, 0.3)]),
    "irregular-123": DegreeDistribution(entries=[(1, 0.1), (2, 0.3), (3, 0.6)]),
    "irregular-123b": DegreeDistribution(entries=[(1, 0.2), (2, 0.3), (3, 0.5)]),
}


class CodeProfile(BaseModel):
    """Code parameters attached to one user degree."""
    model_config = ConfigDict(frozen=True)

    degree: int = Field(..., ge=1, description="Bursts per user (N_b)")
    data_rate: Rational = Field(..., description="Data code rate R_d")
    info_bits: int = Field(DEFAULT_INFO_BITS, ge=1, description="Information bits k per packet")
    modulation_order: int = Field(DEFAULT_MODULATION_ORDER, ge=2, description="Data modulation order M")
    signalling_rate: Rational = Field(SIGNALLING_RATE, description="Signalling code rate R_s")
    code_id: str = Field(..., min_length=1, description="PER table key of the data code")
    signalling_code_id: str = Field(
        SIGNALLING_CODE_ID, min_length=1, description="PER table key of the signalling code"
    )

    @field_validator("modulation_order")
    @classmethod
    def validate_modulation_order(cls, v):
        if v & (v - 1):
            raise ValueError(f"Modulation order must be a power of two, got {v}")
        return v

    @field_validator("data_rate", "signalling_rate")
    @classmethod
    def validate_rate(cls, v):
        if not 0 < v <= 1:
            raise ValueError(f"Code rate must lie in (0, 1], got {v}")
        return v

    @model_validator(mode="after")
    def validate_field_length(self):
        length = self.data_field_symbols_exact
        if length.denominator != 1 or length <= 0:
            raise ValueError(
                f"Data field length k/(R_d*N_b*log2 M) = {length} is not a positive integer"
            )
        return self

    @property
    def bits_per_symbol(self) -> int:
        return self.modulation_order.bit_length() - 1

    @property
    def data_field_symbols_exact(self) -> Fraction:
        return Fraction(self.info_bits) / (self.data_rate * self.degree * self.bits_per_symbol)

    @classmethod
    def musca_default(
        cls,
        degree: int,
        info_bits: int = DEFAULT_INFO_BITS,
        modulation_order: int = DEFAULT_MODULATION_ORDER,
    ) -> "CodeProfile":
        """R_d = 1/(2 N_b): every degree carries the same information per slot."""
        rate = Fraction(1, 2 * degree)
        return cls(
            degree=degree,
            data_rate=rate,
            info_bits=info_bits,
            modulation_order=modulation_order,
            code_id=code_id_for_rate(rate),
        )

    @classmethod
    def replica(
        cls,
        degree: int,
        info_bits: int = DEFAULT_INFO_BITS,
        modulation_order: int = DEFAULT_MODULATION_ORDER,
    ) -> "CodeProfile":
        """N_b copies of one rate-1/2 codeword; each copy decodes on its own."""
        return cls(
            degree=degree,
            data_rate=Fraction(1, 2 * degree),
            info_bits=info_bits,
            modulation_order=modulation_order,
            code_id=REPLICA_CODE_ID,
        )


class DecodeMode(str, Enum):
    """Decoder family."""
    MUSCA = "musca"
    CRDSA = "crdsa"
    IRSA = "irsa"
    SA = "sa"

    @property
    def is_replica(self) -> bool:
        return self is not DecodeMode.MUSCA


class DecodePolicy(BaseModel):
    """Knobs of the iterative SIC decoder."""
    model_config = ConfigDict(frozen=True)

    signalling_max_interferers: int = Field(
        1, ge=0, description="Largest signalling interferer count worth a decoding attempt"
    )
    order_rule: Literal["lowest-per-first"] = Field(
        "lowest-per-first", description="Data decoding order (ties by lowest user id)"
    )
    retry_rule: Literal["on-improvement", "never"] = Field(
        "on-improvement", description="When a failed attempt may be repeated"
    )
    mode: DecodeMode = Field(DecodeMode.MUSCA, description="Decoder family")
    forced_success: bool = Field(False, description="Treat every decoding draw as a success")


class TrialPlan(BaseModel):
    """Everything needed to estimate PLR/throughput at one operating point."""
    model_config = ConfigDict(frozen=True)

    n_slots: int = Field(100, ge=1, description="Slots per frame (N_s)")
    n_users: int = Field(..., ge=0, description="Users per frame (N_u)")
    dist: DegreeDistribution = Field(..., description="Degree distribution")
    profiles: Optional[Dict[int, CodeProfile]] = Field(
        None, description="Degree -> code profile; defaults to the family of the decode mode"
    )
    snr_db: float = Field(8.0, description="Es/N0 in dB")
    trials: int = Field(10_000, ge=1, description="Frames to simulate")
    master_seed: int = Field(20131, ge=0, lt=MAX_SEED, description="Seed all trial streams derive from")
    policy: DecodePolicy = Field(default_factory=DecodePolicy)
    ci_stop: bool = Field(False, description="Stop early once plr_ci95 < 0.1 * plr")
    chunk_size: int = Field(500, ge=1, description="Trials per work unit")

    @field_validator("dist", mode="before")
    @classmethod
    def parse_dist(cls, v):
        if isinstance(v, str):
            return DegreeDistribution.parse(v)
        return v

    @model_validator(mode="after")
    def validate_plan(self):
        if self.dist.max_degree > self.n_slots:
            raise ValueError(
                f"Degree {self.dist.max_degree} cannot be placed on {self.n_slots} slots"
            )
        mode = self.policy.mode
        if mode is DecodeMode.SA and self.dist.support != (1,):
            raise ValueError("Mode sa requires the degree distribution x")
        if mode is DecodeMode.CRDSA and len(self.dist.support) != 1:
            raise ValueError("Mode crdsa requires a regular degree distribution")
        if self.profiles is not None:
            missing = [d for d in self.dist.support if d not in self.profiles]
            if missing:
                raise ValueError(f"No code profile for degrees {missing}")
            for degree, profile in self.profiles.items():
                if profile.degree != degree:
                    raise ValueError(f"Profile keyed {degree} has degree {profile.degree}")
        return self

    @property
    def g(self) -> float:
        return self.n_users / self.n_slots

    def profile_map(self) -> Dict[int, CodeProfile]:
        if self.profiles is not None:
            return dict(self.profiles)
        factory = CodeProfile.replica if self.policy.mode.is_replica else CodeProfile.musca_default
        return {d: factory(d) for d in self.dist.support}


class EstimateResult(BaseModel):
    """Pooled Monte Carlo estimate at one (load, SNR) point."""
    g: float = Field(..., ge=0, description="Normalized load N_u/N_s")
    snr_db: float = Field(..., description="Es/N0 in dB")
    n_users: int = Field(..., ge=0)
    n_slots: int = Field(..., ge=1)
    plr: float = Field(..., ge=0, le=1, description="Pooled packet loss ratio")
    plr_ci95: float = Field(..., ge=0, description="95% CI half-width (normal approximation)")
    throughput: float = Field(..., ge=0, description="T = G (1 - PLR)")
    trials_run: int = Field(..., ge=0)
    decoded_total: int = Field(..., ge=0)
    offered_total: int = Field(..., ge=0)
    deadlocks: int = Field(0, ge=0, description="Frames ending with undecoded users")
    aborted_trials: int = Field(0, ge=0, description="Frames aborted by a decoder invariant violation")
    plr_by_degree: Dict[int, float] = Field(default_factory=dict)
    master_seed: int = Field(..., ge=0)


class SnrSweep(BaseModel):
    """Cartesian SNR x load evaluation with the throughput peak of every SNR row."""
    snr_values: List[float]
    g_values: List[float]
    rows: List[List[EstimateResult]]
    peaks: List[EstimateResult]


class SpectralPoint(BaseModel):
    """Peak throughput at one SNR, converted to bits per symbol."""
    snr_db: float
    peak_throughput: float
    peak_g: float
    spectral_efficiency: float
    qpsk_capacity: float


class SearchSpec(BaseModel):
    """Grid search over degree distributions."""
    model_config = ConfigDict(frozen=True)

    degrees: Tuple[int, ...] = Field((1, 2, 3), description="Degrees the simplex spans")
    step: float = Field(0.05, gt=0, le=1, description="Probability grid step")
    snr_db: float = Field(8.0)
    n_slots: int = Field(100, ge=1)
    trials: int = Field(1000, ge=1, description="Frames per (candidate, load) point")
    g_grid: Tuple[float, ...] = Field(
        default_factory=lambda: inclusive_grid(0.5, 1.8, 0.05),
        description="Loads scanned for each candidate's peak",
    )
    master_seed: int = Field(20131, ge=0, lt=MAX_SEED)
    policy: DecodePolicy = Field(default_factory=DecodePolicy)

    @field_validator("degrees")
    @classmethod
    def validate_degrees(cls, v):
        if not v:
            raise ValueError("At least one degree is required")
        if len(set(v)) != len(v) or any(d < 1 for d in v):
            raise ValueError(f"Degrees must be unique and >= 1, got {v}")
        return tuple(sorted(v))

    @field_validator("step")
    @classmethod
    def validate_step(cls, v):
        parts = round(1.0 / v)
        if abs(parts * v - 1.0) > 1e-9:
            raise ValueError(f"Step {v} does not divide 1")
        return v

    @field_validator("g_grid")
    @classmethod
    def validate_g_grid(cls, v):
        if not v:
            raise ValueError("The load grid is empty")
        if any(g < 0 for g in v):
            raise ValueError("Loads must be non-negative")
        return tuple(v)

    @model_validator(mode="after")
    def validate_search(self):
        if max(self.degrees) > self.n_slots:
            raise ValueError(f"Degree {max(self.degrees)} exceeds {self.n_slots} slots")
        return self


class RankedCandidate(BaseModel):
    """One row of the optimizer ranking."""
    rank: int
    dist: DegreeDistribution
    peak_throughput: float
    peak_g: float
    mean_degree: float


class OptimizationResult(BaseModel):
    best: DegreeDistribution
    peak_throughput: float
    ranking: List[RankedCandidate]


# ---------------------------------------------------------------------------
# HTTP surface
# ---------------------------------------------------------------------------

PerSource = Literal["parametric", "anchors", "collision", "ideal"]

# Largest frame an HTTP request may ask for (N_u x N_s placement weights per frame).
MAX_REQUEST_SLOTS = 1000
MAX_REQUEST_LOAD = 4.0


class SimulateRequest(BaseModel):
    """Request body for /simulate."""
    n_slots: int = Field(100, ge=1, le=MAX_REQUEST_SLOTS, description="Slots per frame")
    g: float = Field(..., ge=0, le=MAX_REQUEST_LOAD, description="Normalized load; N_u = round(g * n_slots)")
    dist: str = Field("1:0.1,2:0.3,3:0.6", description="Degree distribution d1:p1,d2:p2,...")
    snr_db: float = Field(8.0, description="Es/N0 in dB")
    mode: DecodeMode = Field(DecodeMode.MUSCA)
    trials: int = Field(1000, ge=1, le=100_000)
    seed: int = Field(20131, ge=0, lt=MAX_SEED)
    per_source: PerSource = Field("parametric", description="Built-in PER model")

    @field_validator("dist")
    @classmethod
    def validate_dist(cls, v):
        DegreeDistribution.parse(v)
        return v


class DecodeEventModel(BaseModel):
    phase: Literal["locate", "data"]
    user_id: int
    config: str = Field(..., description="Interferer counts, e.g. [1 2 3]")
    per_used: float
    success: bool
    draw: Optional[float] = None


class ExampleRun(BaseModel):
    """One decoding of the four-user, three-slot scenario."""
    mode: Literal["forced-success", "stochastic"]
    events: List[DecodeEventModel]
    decoded: List[int]
    deadlock: bool
    matches_reference: bool


class ExampleResponse(BaseModel):
    runs: List[ExampleRun]


class SweepJobStatus(str, Enum):
    """Status of a background load sweep."""
    ACCEPTED = "accepted"
    PROCESSING = "processing"
    COMPLETED = "completed"
    FAILED = "failed"


class SweepLoadRequest(BaseModel):
    """Request body for a background load sweep."""
    n_slots: int = Field(100, ge=1, le=MAX_REQUEST_SLOTS)
    g_values: List[float] = Field(..., min_length=1, max_length=200)
    dist: str = Field("1:0.1,2:0.3,3:0.6")
    snr_db: float = Field(8.0)
    mode: DecodeMode = Field(DecodeMode.MUSCA)
    trials: int = Field(1000, ge=1, le=100_000)
    seed: int = Field(20131, ge=0, lt=MAX_SEED)
    per_source: PerSource = Field("parametric")

    @field_validator("dist")
    @classmethod
    def validate_dist(cls, v):
        DegreeDistribution.parse(v)
        return v

    @field_validator("g_values")
    @classmethod
    def validate_g_values(cls, v):
        if any(g < 0 or g > MAX_REQUEST_LOAD for g in v):
            raise ValueError(f"Loads must lie in [0, {MAX_REQUEST_LOAD}]")
        return v


class SweepJobResponse(BaseModel):
    """Response when a sweep job is submitted."""
    job_id: str = Field(..., description="Identifier for progress tracking")
    status: SweepJobStatus
    total_points: int
    message: str = Field(
        default="Sweep accepted. Use GET /api/v1/sweeps/{job_id}/status to track progress."
    )


class SweepPointResult(BaseModel):
    """Outcome of one grid point (partial results are visible while the sweep runs)."""
    index: int
    success: bool
    result: Optional[EstimateResult] = None
    error: Optional[str] = None


class SweepStatusResponse(BaseModel):
    job_id: str
    status: SweepJobStatus
    total_points: int
    completed_count: int
    failed_count: int = 0
    progress_percent: float = Field(..., ge=0, le=100)
    results: Optional[List[SweepPointResult]] = None
    created_at: Optional[str] = None
    updated_at: Optional[str] = None


class SweepJobListItem(BaseModel):
    job_id: str
    status: str
    total_points: int
    completed_count: int
    failed_count: int
    created_at: Optional[str] = None
    updated_at: Optional[str] = None


class SweepJobListResponse(BaseModel):
    jobs: List[SweepJobListItem] = Field(..., description="Most recent first")
