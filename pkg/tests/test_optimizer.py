"""Tests for the degree distribution grid search."""
import pytest

from app.models.schemas import DecodePolicy, PRESET_DISTRIBUTIONS, SearchSpec
from app.services.optimizer import enumerate_simplex, optimize
from app.services.per_model import collision_channel_table, ideal_table

ALL_CODES = ["rm_14_64", "turbo_r12", "turbo_r14", "turbo_r16"]


@pytest.mark.parametrize(
    "degrees, step, expected",
    [
        ((1, 2, 3), 0.5, 6),
        ((1, 2, 3), 0.1, 66),
        ((1, 2, 3), 1.0, 3),
        ((2,), 0.25, 1),
        ((1, 2), 0.2, 6),
    ],
)
def test_simplex_size(degrees, step, expected):
    assert len(enumerate_simplex(degrees, step)) == expected


def test_simplex_contains_tabulated_optimum():
    candidates = enumerate_simplex([1, 2, 3], 0.1)
    assert PRESET_DISTRIBUTIONS["irregular-123"] in candidates
    assert PRESET_DISTRIBUTIONS["irregular-23"] in candidates
    assert all(abs(sum(c.probabilities) - 1.0) < 1e-9 for c in candidates)


def test_simplex_rejects_bad_steps():
    with pytest.raises(ValueError):
        enumerate_simplex([1, 2], 0.3)
    with pytest.raises(ValueError):
        enumerate_simplex([1, 2], 0.0)
    with pytest.raises(ValueError):
        enumerate_simplex([], 0.5)


def test_search_spec_validation():
    with pytest.raises(ValueError):
        SearchSpec(step=0.3)
    with pytest.raises(ValueError):
        SearchSpec(degrees=(1, 2, 3), n_slots=2)
    with pytest.raises(ValueError):
        SearchSpec(g_grid=())
    assert SearchSpec(degrees=(3, 1)).degrees == (1, 3)
    assert SearchSpec().g_grid[0] == 0.5 and SearchSpec().g_grid[-1] == 1.8


def test_single_degree_search_returns_that_degree():
    spec = SearchSpec(degrees=(1,), step=1.0, n_slots=10, trials=5, g_grid=(0.5, 1.0))
    result = optimize(spec, collision_channel_table(ALL_CODES, max_degree=3), workers=1)
    assert len(result.ranking) == 1
    assert result.best == PRESET_DISTRIBUTIONS["slotted-aloha"]
    assert result.ranking[0].rank == 1


def test_ranking_is_sorted_and_complete():
    spec = SearchSpec(degrees=(1, 2), step=0.5, n_slots=10, trials=5, g_grid=(0.5, 1.0, 1.5))
    result = optimize(spec, ideal_table(ALL_CODES), workers=1)
    assert len(result.ranking) == 3
    assert [c.rank for c in result.ranking] == [1, 2, 3]
    peaks = [c.peak_throughput for c in result.ranking]
    assert peaks == sorted(peaks, reverse=True)
    assert result.best == result.ranking[0].dist
    assert result.peak_throughput == peaks[0]
    assert all(c.peak_g in spec.g_grid for c in result.ranking)


def test_ties_prefer_lower_mean_degree():
    """With a PER-0 table and unbounded signalling every candidate decodes everything."""
    spec = SearchSpec(
        degrees=(1, 2),
        step=0.5,
        n_slots=10,
        trials=3,
        g_grid=(0.5, 1.0),
        policy=DecodePolicy(signalling_max_interferers=1000),
    )
    result = optimize(spec, ideal_table(ALL_CODES), workers=1)
    assert {c.peak_throughput for c in result.ranking} == {1.0}
    assert [c.mean_degree for c in result.ranking] == [1.0, 1.5, 2.0]
