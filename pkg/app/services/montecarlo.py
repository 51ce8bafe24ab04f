"""
Monte Carlo harness and performance measures.

Every trial draws one frame and decodes it with a generator seeded from
(master_seed, trial_index) alone, so a point estimate does not depend on how
trials are split into chunks or spread over worker processes. Chunks are
reduced in index order; CI-width stopping is decided at chunk boundaries in
that same order.
"""
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from app.config import settings
from app.models.schemas import (
    PRESET_DISTRIBUTIONS,
    CodeProfile,
    DecodeMode,
    DecodePolicy,
    EstimateResult,
    SnrSweep,
    SpectralPoint,
    TrialPlan,
)
from app.services.decoder import DecoderInvariantError, SICDecoder
from app.services.frame_builder import build_frame, data_field_symbols
from app.services.per_model import PerTable

logger = logging.getLogger(__name__)

Z_95 = 1.96
CI_STOP_RATIO = 0.1
GAUSS_HERMITE_NODES = 64


@dataclass(slots=True)
class TrialCounters:
    """Additive per-trial tallies; chunks reduce by summation."""
    trials: int = 0
    offered: int = 0
    decoded: int = 0
    deadlocks: int = 0
    aborted: int = 0
    offered_by_degree: Dict[int, int] = field(default_factory=dict)
    decoded_by_degree: Dict[int, int] = field(default_factory=dict)

    def add(self, other: "TrialCounters") -> None:
        self.trials += other.trials
        self.offered += other.offered
        self.decoded += other.decoded
        self.deadlocks += other.deadlocks
        self.aborted += other.aborted
        for d, n in other.offered_by_degree.items():
            self.offered_by_degree[d] = self.offered_by_degree.get(d, 0) + n
        for d, n in other.decoded_by_degree.items():
            self.decoded_by_degree[d] = self.decoded_by_degree.get(d, 0) + n

    @property
    def plr(self) -> float:
        return 1.0 - self.decoded / self.offered if self.offered else 0.0

    @property
    def plr_ci95(self) -> float:
        if not self.offered:
            return 0.0
        p = self.plr
        return Z_95 * math.sqrt(p * (1.0 - p) / self.offered)


def normalized_load(n_users: int, n_slots: int) -> float:
    """G = N_u / N_s."""
    if n_slots < 1:
        raise ValueError("n_slots must be >= 1")
    return n_users / n_slots


def users_for_load(g: float, n_slots: int) -> int:
    """N_u = round(G N_s), halves rounded up."""
    if g < 0:
        raise ValueError(f"Load must be >= 0, got {g}")
    return int(math.floor(g * n_slots + 0.5))


def sa_analytic_throughput(g: float) -> float:
    """Slotted ALOHA on an infinite frame: T = G e^-G."""
    if g < 0:
        raise ValueError(f"Load must be >= 0, got {g}")
    return g * math.exp(-g)


def trial_rng(master_seed: int, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(trial_index,)))


def run_trials(plan: TrialPlan, per_table: PerTable, start: int, stop: int) -> TrialCounters:
    """Trials ``start..stop-1`` of ``plan``; module-level so worker processes can run it."""
    profiles = plan.profile_map()
    counters = TrialCounters()
    for index in range(start, stop):
        rng = trial_rng(plan.master_seed, index)
        frame, users = build_frame(plan.n_users, plan.n_slots, plan.dist, profiles, rng)
        decoder = SICDecoder(per_table, plan.snr_db, plan.policy, rng)
        try:
            report = decoder.decode(frame, users)
        except DecoderInvariantError:
            logger.exception("Trial %d of seed %d aborted", index, plan.master_seed)
            counters.aborted += 1
            continue
        counters.trials += 1
        counters.offered += len(users)
        counters.decoded += len(report.decoded)
        counters.deadlocks += int(report.deadlock)
        for user in users:
            d = user.degree
            counters.offered_by_degree[d] = counters.offered_by_degree.get(d, 0) + 1
            if user.decoded:
                counters.decoded_by_degree[d] = counters.decoded_by_degree.get(d, 0) + 1
    return counters


def _chunks(trials: int, chunk_size: int) -> List[Tuple[int, int]]:
    return [(start, min(start + chunk_size, trials)) for start in range(0, trials, chunk_size)]


def _ci_reached(counters: TrialCounters) -> bool:
    plr = counters.plr
    return plr > 0 and counters.plr_ci95 < CI_STOP_RATIO * plr


def _to_result(plan: TrialPlan, counters: TrialCounters) -> EstimateResult:
    g = normalized_load(plan.n_users, plan.n_slots)
    plr = counters.plr
    return EstimateResult(
        g=g,
        snr_db=plan.snr_db,
        n_users=plan.n_users,
        n_slots=plan.n_slots,
        plr=plr,
        plr_ci95=counters.plr_ci95,
        throughput=g * (1.0 - plr),
        trials_run=counters.trials,
        decoded_total=counters.decoded,
        offered_total=counters.offered,
        deadlocks=counters.deadlocks,
        aborted_trials=counters.aborted,
        plr_by_degree={
            d: 1.0 - counters.decoded_by_degree.get(d, 0) / n
            for d, n in sorted(counters.offered_by_degree.items())
            if n
        },
        master_seed=plan.master_seed,
    )


def estimate(plan: TrialPlan, per_table: PerTable, workers: Optional[int] = None) -> EstimateResult:
    """Pooled PLR and throughput of ``plan``."""
    workers = workers or settings.workers
    chunks = _chunks(plan.trials, plan.chunk_size)
    total = TrialCounters()
    stopped_early = False

    if workers <= 1 or len(chunks) == 1:
        for start, stop in chunks:
            total.add(run_trials(plan, per_table, start, stop))
            logger.debug("Chunk %d-%d reduced: plr=%.6g", start, stop, total.plr)
            if plan.ci_stop and _ci_reached(total):
                stopped_early = stop < plan.trials
                break
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(run_trials, plan, per_table, start, stop) for start, stop in chunks]
            for (start, stop), future in zip(chunks, futures):
                total.add(future.result())
                logger.debug("Chunk %d-%d reduced: plr=%.6g", start, stop, total.plr)
                if plan.ci_stop and _ci_reached(total):
                    stopped_early = stop < plan.trials
                    for pending in futures:
                        pending.cancel()
                    break

    if stopped_early:
        logger.info("CI stop after %d of %d trials (plr=%.4g)", total.trials, plan.trials, total.plr)
    if total.aborted:
        logger.warning("%d trials aborted by decoder invariant violations", total.aborted)
    result = _to_result(plan, total)
    logger.info(
        "Estimate G=%.4g snr=%.3g dB: plr=%.4g +/- %.2g, T=%.4g (%d trials)",
        result.g, result.snr_db, result.plr, result.plr_ci95, result.throughput, result.trials_run,
    )
    return result


def plan_for_load(plan: TrialPlan, g: float) -> TrialPlan:
    return plan.model_copy(update={"n_users": users_for_load(g, plan.n_slots)})


def sweep_load(
    plan: TrialPlan,
    g_values: Sequence[float],
    per_table: PerTable,
    workers: Optional[int] = None,
) -> List[EstimateResult]:
    """One estimate per load, all on the plan's master seed."""
    if not g_values:
        raise ValueError("g_values must not be empty")
    return [estimate(plan_for_load(plan, g), per_table, workers) for g in g_values]


def peak(results: Sequence[EstimateResult]) -> EstimateResult:
    """Highest throughput; the lowest load wins ties."""
    return max(results, key=lambda r: (r.throughput, -r.g))


def sweep_snr(
    plan: TrialPlan,
    snr_values: Sequence[float],
    g_values: Sequence[float],
    per_table: PerTable,
    workers: Optional[int] = None,
) -> SnrSweep:
    """Cartesian SNR x load evaluation with the throughput peak of each SNR."""
    if not snr_values:
        raise ValueError("snr_values must not be empty")
    if not g_values:
        raise ValueError("g_values must not be empty")
    rows = []
    for snr_db in snr_values:
        at_snr = plan.model_copy(update={"snr_db": float(snr_db)})
        rows.append(sweep_load(at_snr, g_values, per_table, workers))
    return SnrSweep(
        snr_values=[float(s) for s in snr_values],
        g_values=[float(g) for g in g_values],
        rows=rows,
        peaks=[peak(row) for row in rows],
    )


def spectral_efficiency(max_t: float, r_d, n_b: int, m: int) -> float:
    """S = max(T) R_d N_b log2 M bits per symbol."""
    if m < 2:
        raise ValueError(f"Modulation order must be >= 2, got {m}")
    return max_t * float(Fraction(r_d)) * n_b * math.log2(m)


def spectral_efficiency_from_profile(max_t: float, profile: CodeProfile) -> float:
    """S = max(T) k / L_d: information bits per data symbol of a slot."""
    return max_t * profile.info_bits / data_field_symbols(profile)


def qpsk_capacity(snr_db: float) -> float:
    """
    Constellation-constrained AWGN capacity of Gray QPSK at Es/N0 = ``snr_db``,
    twice the BPSK capacity of each quadrature branch.
    """
    sigma2 = 10.0 ** (-snr_db / 10.0)
    nodes, weights = np.polynomial.hermite.hermgauss(GAUSS_HERMITE_NODES)
    y = 1.0 + math.sqrt(2.0 * sigma2) * nodes
    penalty = np.logaddexp(0.0, -2.0 * y / sigma2) / math.log(2.0)
    bpsk = 1.0 - float(np.dot(weights, penalty)) / math.sqrt(math.pi)
    return 2.0 * bpsk


def spectral_sweep(
    plan: TrialPlan,
    snr_values: Sequence[float],
    g_values: Sequence[float],
    per_table: PerTable,
    workers: Optional[int] = None,
) -> List[SpectralPoint]:
    """Peak throughput per SNR converted to bits/symbol, beside the QPSK limit."""
    sweep = sweep_snr(plan, snr_values, g_values, per_table, workers)
    profiles = plan.profile_map()
    reference = profiles[max(profiles)]
    return [
        SpectralPoint(
            snr_db=best.snr_db,
            peak_throughput=best.throughput,
            peak_g=best.g,
            spectral_efficiency=spectral_efficiency(
                best.throughput, reference.data_rate, reference.degree, reference.modulation_order
            ),
            qpsk_capacity=qpsk_capacity(best.snr_db),
        )
        for best in sweep.peaks
    ]


def operating_load(results: Iterable[EstimateResult], target_plr: float = 1e-2) -> Optional[EstimateResult]:
    """Largest load whose PLR does not exceed ``target_plr``, or None."""
    admissible = [r for r in results if r.plr <= target_plr]
    if not admissible:
        return None
    return max(admissible, key=lambda r: r.g)


# name -> (decoder mode, preset distribution)
DEFAULT_SCHEMES: Dict[str, Tuple[DecodeMode, str]] = {
    "sa": (DecodeMode.SA, "slotted-aloha"),
    "crdsa-3": (DecodeMode.CRDSA, "regular-3"),
    "musca-3": (DecodeMode.MUSCA, "regular-3"),
    "musca-irregular-123": (DecodeMode.MUSCA, "irregular-123"),
}


def compare_schemes(
    g_values: Sequence[float],
    per_table: PerTable,
    schemes: Optional[Mapping[str, Tuple[DecodeMode, str]]] = None,
    n_slots: int = 100,
    snr_db: float = 8.0,
    trials: Optional[int] = None,
    master_seed: Optional[int] = None,
    policy: Optional[DecodePolicy] = None,
    workers: Optional[int] = None,
) -> Dict[str, List[EstimateResult]]:
    """Load sweeps for several (mode, preset) schemes on common seeds."""
    schemes = schemes or DEFAULT_SCHEMES
    base_policy = policy or DecodePolicy()
    results: Dict[str, List[EstimateResult]] = {}
    for name, (mode, preset) in schemes.items():
        dist = PRESET_DISTRIBUTIONS.get(preset)
        if dist is None:
            raise ValueError(f"Unknown distribution preset {preset!r}")
        plan = TrialPlan(
            n_slots=n_slots,
            n_users=0,
            dist=dist,
            snr_db=snr_db,
            trials=trials or settings.default_trials,
            master_seed=settings.default_seed if master_seed is None else master_seed,
            policy=base_policy.model_copy(update={"mode": mode}),
            chunk_size=settings.trial_chunk_size,
        )
        logger.info("Comparing scheme %s (%s, %s)", name, mode.value, dist.label())
        results[name] = sweep_load(plan, g_values, per_table, workers)
    return results
