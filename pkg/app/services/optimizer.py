"""Grid search over degree distributions for the highest peak throughput."""
import itertools
import logging
from typing import List, Optional, Sequence

from app.config import settings
from app.models.schemas import (
    DegreeDistribution,
    OptimizationResult,
    RankedCandidate,
    SearchSpec,
    TrialPlan,
)
from app.services.montecarlo import peak, sweep_load
from app.services.per_model import PerTable

logger = logging.getLogger(__name__)


def enumerate_simplex(degrees: Sequence[int], step: float) -> List[DegreeDistribution]:
    """
    Every distribution over ``degrees`` whose probabilities are multiples of
    ``step`` (stars and bars over 1/step units). Zero-probability degrees are
    left out of the entries.
    """
    if not 0 < step <= 1:
        raise ValueError(f"Step must lie in (0, 1], got {step}")
    units = round(1.0 / step)
    if abs(units * step - 1.0) > 1e-9:
        raise ValueError(f"Step {step} does not divide 1")
    degrees = sorted(degrees)
    if not degrees:
        raise ValueError("At least one degree is required")
    parts = len(degrees)
    candidates = []
    for bars in itertools.combinations(range(units + parts - 1), parts - 1):
        edges = (-1,) + bars + (units + parts - 1,)
        counts = [edges[i + 1] - edges[i] - 1 for i in range(parts)]
        entries = [(d, k / units) for d, k in zip(degrees, counts) if k]
        candidates.append(DegreeDistribution(entries=entries))
    return candidates


def _rank_key(candidate: RankedCandidate):
    return (-candidate.peak_throughput, candidate.mean_degree, candidate.dist.probabilities)


def optimize(
    spec: SearchSpec,
    per_table: PerTable,
    workers: Optional[int] = None,
) -> OptimizationResult:
    """
    Peak throughput of every simplex candidate over ``spec.g_grid``, all on
    the same seeds. Ties go to the lower mean degree (shorter signalling).
    """
    candidates = enumerate_simplex(spec.degrees, spec.step)
    logger.info(
        "Optimizing over %d distributions of degrees %s at %.3g dB",
        len(candidates), list(spec.degrees), spec.snr_db,
    )
    scored: List[RankedCandidate] = []
    for number, dist in enumerate(candidates, start=1):
        plan = TrialPlan(
            n_slots=spec.n_slots,
            n_users=0,
            dist=dist,
            snr_db=spec.snr_db,
            trials=spec.trials,
            master_seed=spec.master_seed,
            policy=spec.policy,
            chunk_size=settings.trial_chunk_size,
        )
        best = peak(sweep_load(plan, spec.g_grid, per_table, workers))
        logger.info(
            "Candidate %d/%d %s: peak T=%.4g at G=%.3g",
            number, len(candidates), dist.label(), best.throughput, best.g,
        )
        scored.append(
            RankedCandidate(
                rank=0,
                dist=dist,
                peak_throughput=best.throughput,
                peak_g=best.g,
                mean_degree=dist.mean_degree,
            )
        )
    scored.sort(key=_rank_key)
    ranking = [c.model_copy(update={"rank": i}) for i, c in enumerate(scored, start=1)]
    return OptimizationResult(
        best=ranking[0].dist,
        peak_throughput=ranking[0].peak_throughput,
        ranking=ranking,
    )
