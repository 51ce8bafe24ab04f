"""
Long Monte Carlo baselines (10^5 frames per slotted ALOHA point, 10^4 per
CRDSA point). Deselected by default; run with ``pytest -m slow``.

The ordering check on the committed 8 dB table depends on how that table was
calibrated (docs/PER_TABLES.md), so it asserts an ordering and a wide band
rather than point values.
"""
from pathlib import Path

import pytest

from app.models.schemas import DecodeMode, DecodePolicy, PRESET_DISTRIBUTIONS, TrialPlan, inclusive_grid
from app.services.montecarlo import estimate, peak, sa_analytic_throughput, sweep_load
from app.services.per_model import collision_channel_table, load_per_table

pytestmark = pytest.mark.slow

COMMITTED_TABLE = Path(__file__).resolve().parent.parent / "data" / "per_tables" / "turbo_rm_8db.csv"
ALL_CODES = ["rm_14_64", "turbo_r12", "turbo_r14", "turbo_r16"]
SA_FRAMES = 100_000


@pytest.fixture(scope="module")
def collision():
    return collision_channel_table(ALL_CODES, max_degree=3)


def _plan(preset, mode=DecodeMode.MUSCA, trials=1000):
    return TrialPlan(
        n_slots=100,
        n_users=0,
        dist=PRESET_DISTRIBUTIONS[preset],
        snr_db=8.0,
        trials=trials,
        master_seed=20131,
        policy=DecodePolicy(mode=mode),
    )


@pytest.mark.parametrize("g", inclusive_grid(0.2, 2.0, 0.2))
def test_slotted_aloha_matches_analytic_throughput(collision, g):
    plan = _plan("slotted-aloha", DecodeMode.SA, trials=SA_FRAMES).model_copy(
        update={"n_users": round(g * 100)}
    )
    result = estimate(plan, collision)
    assert result.throughput == pytest.approx(sa_analytic_throughput(g), abs=0.02)


def test_slotted_aloha_peak(collision):
    plan = _plan("slotted-aloha", DecodeMode.SA, trials=SA_FRAMES).model_copy(update={"n_users": 100})
    assert estimate(plan, collision).throughput == pytest.approx(0.368, abs=0.01)


def test_crdsa_three_replicas_peak_band(collision):
    results = sweep_load(_plan("regular-3", DecodeMode.CRDSA, trials=10_000), inclusive_grid(0.5, 0.9, 0.05), collision)
    assert 0.60 <= peak(results).throughput <= 0.72


def test_distribution_ordering_on_committed_table():
    table = load_per_table(COMMITTED_TABLE)
    grid = inclusive_grid(0.2, 1.8, 0.1)
    peaks = {}
    for preset in ("slotted-aloha", "regular-2", "regular-3", "irregular-23", "irregular-123", "irregular-123b"):
        peaks[preset] = peak(sweep_load(_plan(preset, trials=500), grid, table)).throughput

    assert peaks["irregular-123"] > peaks["irregular-23"] > peaks["regular-3"]
    assert peaks["regular-3"] > peaks["regular-2"] > peaks["slotted-aloha"]
    assert peaks["irregular-123"] > peaks["irregular-123b"]
    assert 1.30 <= peaks["irregular-123"] <= 1.50
