"""Tests for PER tables: lookup, interpolation, fallback, file I/O and built-in sources."""
from pathlib import Path

import pytest

from app.models.frame import ERASED, InterferenceConfig
from app.services.per_model import (
    SIGNALLING_CURVE,
    TURBO_CURVE,
    PerLookupError,
    PerTable,
    PerTableError,
    all_configs,
    build_per_table,
    builtin_anchor_table,
    collision_channel_table,
    config_information,
    ideal_table,
    load_per_table,
    load_per_tables,
    parametric_table,
    write_per_table,
)

COMMITTED_TABLE = Path(__file__).resolve().parent.parent / "data" / "per_tables" / "turbo_rm_8db.csv"

cfg = InterferenceConfig.parse


@pytest.fixture
def anchors():
    return builtin_anchor_table()


@pytest.fixture
def two_point_table():
    """Two codes, each with one config stored at 4 and 6 dB."""
    return PerTable({
        ("c", 4.0, cfg("0")): 1e-2,
        ("c", 6.0, cfg("0")): 1e-4,
        ("z", 4.0, cfg("0")): 1e-1,
        ("z", 6.0, cfg("0")): 0.0,
    })


def _write(tmp_path, name, lines):
    path = tmp_path / name
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def test_anchor_values_are_returned_exactly(anchors):
    assert anchors.lookup("rm_14_64", 5.0, cfg("[1]")) == 0.109
    assert anchors.lookup("rm_14_64", 5.0, cfg("[0]")) == 1e-4
    assert anchors.lookup("turbo_r16", 5.0, cfg("[1 2 E]")) == 0.02
    assert anchors.lookup("turbo_r14", 5.0, cfg("[0 2]")) == 1e-4
    assert anchors.lookup("turbo_r14", 5.0, cfg("[1 1]")) == 1e-4


def test_erasure_makes_configs_equal(anchors):
    """Components above the threshold all read as E."""
    expected = anchors.lookup("turbo_r16", 5.0, cfg("1|2|E"))
    assert anchors.lookup("turbo_r16", 5.0, InterferenceConfig.of(1, 2, 3)) == expected
    assert anchors.lookup("turbo_r16", 5.0, InterferenceConfig.of(5, 2, 1)) == expected


def test_dominance_fallback(anchors):
    """Unknown configs take the worst nearest dominating entry; none dominating means 1."""
    assert anchors.lookup("turbo_r14", 5.0, cfg("0|0")) == 1e-4
    assert anchors.lookup("turbo_r14", 5.0, cfg("0|1")) == 1e-4
    assert anchors.lookup("turbo_r16", 5.0, cfg("1|1|2")) == 0.02
    assert anchors.lookup("turbo_r14", 5.0, cfg("2|2")) == 1.0
    assert anchors.lookup("rm_14_64", 5.0, cfg("2")) == 1.0


def test_unknown_code_raises(anchors):
    with pytest.raises(PerLookupError):
        anchors.lookup("turbo_r18", 5.0, cfg("0"))


def test_interpolation_exact_at_stored_snr(two_point_table):
    assert two_point_table.lookup("c", 4.0, cfg("0")) == 1e-2
    assert two_point_table.lookup("c", 6.0, cfg("0")) == 1e-4


def test_interpolation_is_log_linear_between_points(two_point_table):
    assert two_point_table.lookup("c", 5.0, cfg("0")) == pytest.approx(1e-3, rel=1e-9)
    assert two_point_table.lookup("c", 4.5, cfg("0")) == pytest.approx(10 ** -2.5, rel=1e-9)


def test_interpolation_is_linear_next_to_zero(two_point_table):
    assert two_point_table.lookup("z", 5.0, cfg("0")) == pytest.approx(0.05)


def test_interpolation_clamps_outside_range(two_point_table):
    assert two_point_table.lookup("c", -10.0, cfg("0")) == 1e-2
    assert two_point_table.lookup("c", 30.0, cfg("0")) == 1e-4
    assert two_point_table.snr_range("c") == (4.0, 6.0)


def test_per_is_monotone_in_snr_for_parametric_model():
    table = parametric_table([0.0, 2.0, 4.0, 6.0, 8.0, 10.0])
    for config in all_configs(3, 2):
        values = [table.lookup("turbo_r16", s, config) for s in (0.0, 1.0, 3.0, 5.0, 7.0, 9.0, 10.0)]
        assert all(a >= b for a, b in zip(values, values[1:]))


def test_parametric_fit_reproduces_anchors():
    assert TURBO_CURVE.per(cfg("1|2|E"), 5.0) == pytest.approx(0.02, rel=1e-9)
    assert TURBO_CURVE.per(cfg("1|1"), 5.0) == pytest.approx(1e-4, rel=1e-9)
    assert SIGNALLING_CURVE.per(cfg("1"), 5.0) == pytest.approx(0.109, rel=1e-9)
    assert SIGNALLING_CURVE.per(cfg("0"), 5.0) == pytest.approx(1e-4, rel=1e-9)
    assert TURBO_CURVE.a == pytest.approx(17.87, abs=0.01)
    assert SIGNALLING_CURVE.a == pytest.approx(5.724, abs=0.01)


def test_parametric_model_limits():
    assert TURBO_CURVE.per(cfg("E|E|E"), 8.0) == 1.0
    assert TURBO_CURVE.per(cfg("0|0|0"), 8.0) == 1e-6
    assert config_information(cfg("E"), 8.0) == 0.0


def test_parametric_table_covers_default_codes():
    table = parametric_table([8.0], max_degree=3)
    assert table.code_ids == ("rm_14_64", "turbo_r12", "turbo_r14", "turbo_r16")
    # 10 + 4 + 20 configs over {0, 1, 2, E} plus 4 signalling configs
    assert len(table) == 4 + 10 + 20 + 4


def test_committed_table_loads_and_matches_model():
    table = load_per_table(COMMITTED_TABLE)
    assert table.erasure_threshold == 2
    assert table.lookup("turbo_r16", 5.0, cfg("1|2|E")) == 0.02
    assert table.lookup("turbo_r16", 8.0, cfg("1|2|E")) == 2.66e-3
    assert table.lookup("rm_14_64", 8.0, cfg("1")) == 0.0709
    model = TURBO_CURVE.per(cfg("2|2|2"), 8.0)
    assert table.lookup("turbo_r16", 8.0, cfg("2|2|2")) == pytest.approx(model, rel=0.01)


def test_load_rejects_per_out_of_range(tmp_path):
    path = _write(tmp_path, "bad.csv", [
        "code_id,snr_db,config,per",
        "c,5.0,0,0.1",
        "c,5.0,1,1.5",
    ])
    with pytest.raises(PerTableError) as exc:
        load_per_table(path)
    assert exc.value.line == 3
    assert "line 3" in str(exc.value)


def test_load_rejects_duplicates_with_line_numbers(tmp_path):
    path = _write(tmp_path, "dup.csv", [
        "# comment",
        "c,5.0,1|2|3,0.5",
        "c,5.0,1|2|E,0.5",
    ])
    with pytest.raises(PerTableError) as exc:
        load_per_table(path)
    assert exc.value.line == 3
    assert "first on line 2" in str(exc.value)


def test_load_rejects_malformed_rows(tmp_path):
    path = _write(tmp_path, "short.csv", ["c,5.0,0"])
    with pytest.raises(PerTableError) as exc:
        load_per_table(path)
    assert exc.value.line == 1

    path = _write(tmp_path, "text.csv", ["c,five,0,0.1"])
    with pytest.raises(PerTableError):
        load_per_table(path)


def test_load_rejects_per_rising_with_snr(tmp_path):
    path = _write(tmp_path, "rise.csv", ["c,5.0,0,0.01", "c,8.0,0,0.1"])
    with pytest.raises(PerTableError, match="rises with SNR"):
        load_per_table(path)


def test_load_rejects_dominance_violation(tmp_path):
    path = _write(tmp_path, "dom.csv", ["c,5.0,0|1,0.5", "c,5.0,1|1,0.1"])
    with pytest.raises(PerTableError, match="Dominance"):
        load_per_table(path)


def test_missing_file_raises(tmp_path):
    with pytest.raises(PerTableError, match="not found"):
        load_per_table(tmp_path / "absent.csv")


def test_merge_rejects_overlapping_keys(tmp_path):
    first = _write(tmp_path, "a.csv", ["c,5.0,0,0.1"])
    second = _write(tmp_path, "b.csv", ["c,5.0,0,0.2"])
    third = _write(tmp_path, "c.csv", ["d,5.0,0,0.2"])
    with pytest.raises(PerTableError, match="Duplicate"):
        load_per_tables([first, second])
    merged = load_per_tables([first, third])
    assert merged.code_ids == ("c", "d")


def test_written_table_loads_back(tmp_path, anchors):
    path = tmp_path / "out" / "anchors.csv"
    write_per_table(anchors, path, comments=["anchors only"])
    text = path.read_text(encoding="utf-8")
    assert text.startswith("# anchors only\n# erasure_threshold=2\ncode_id,snr_db,config,per\n")
    loaded = load_per_table(path)
    assert dict(loaded.items()) == dict(anchors.items())


def test_written_table_keeps_non_default_erasure_threshold(tmp_path):
    original = parametric_table([8.0], erasure_threshold=3)
    path = tmp_path / "t3.csv"
    write_per_table(original, path)
    loaded = load_per_table(path)
    assert loaded.erasure_threshold == 3
    assert len(loaded) == len(original)
    for (code_id, snr_db, config), per in original.items():
        assert loaded.stored(code_id, snr_db, config) == pytest.approx(per, rel=1e-5)
    assert loaded.lookup("turbo_r16", 8.0, cfg("3|3|3")) == pytest.approx(
        original.lookup("turbo_r16", 8.0, cfg("3|3|3")), rel=1e-5
    )


def test_declared_threshold_must_match_explicit_argument(tmp_path):
    path = _write(tmp_path, "t3.csv", ["# erasure_threshold=3", "c,5.0,0,0.1"])
    assert load_per_table(path, erasure_threshold=3).erasure_threshold == 3
    with pytest.raises(PerTableError) as exc:
        load_per_table(path, erasure_threshold=2)
    assert exc.value.line == 1


def test_declared_threshold_after_rows_is_rejected(tmp_path):
    path = _write(tmp_path, "late.csv", ["c,5.0,0,0.1", "# erasure_threshold=3"])
    with pytest.raises(PerTableError, match="precede") as exc:
        load_per_table(path)
    assert exc.value.line == 2


def test_tables_with_different_thresholds_do_not_merge(tmp_path):
    first = _write(tmp_path, "a.csv", ["# erasure_threshold=2", "c,5.0,0,0.1"])
    second = _write(tmp_path, "b.csv", ["# erasure_threshold=3", "d,5.0,0,0.1"])
    with pytest.raises(PerTableError, match="erasure thresholds"):
        load_per_tables([first, second])


def test_invalid_utf8_is_a_load_error_with_its_line(tmp_path):
    path = tmp_path / "latin.csv"
    path.write_bytes(b"code_id,snr_db,config,per\nc,5.0,0,0.1\nturbo_r\xff14,5.0,0,0.1\n")
    with pytest.raises(PerTableError, match="UTF-8") as exc:
        load_per_table(path)
    assert exc.value.line == 3


def test_shared_table_gives_same_values_across_threads():
    from concurrent.futures import ThreadPoolExecutor

    shared = parametric_table([6.0, 8.0])
    queries = [
        (code_id, snr_db, config)
        for code_id in ("turbo_r14", "turbo_r16", "rm_14_64")
        for snr_db in (6.0, 7.0, 7.5, 8.0)
        for config in all_configs(3, 2) + all_configs(1, 4)
    ]
    with ThreadPoolExecutor(max_workers=8) as pool:
        concurrent = list(pool.map(lambda q: shared.lookup(*q), queries * 4))
    fresh = parametric_table([6.0, 8.0])
    expected = [fresh.lookup(*q) for q in queries] * 4
    assert concurrent == expected


def test_collision_channel_table():
    table = collision_channel_table(["turbo_r12"], max_degree=3)
    assert table.lookup("turbo_r12", 8.0, cfg("0")) == 0.0
    assert table.lookup("turbo_r12", 8.0, cfg("0|0|0")) == 0.0
    assert table.lookup("turbo_r12", 8.0, cfg("1")) == 1.0
    assert table.lookup("turbo_r12", 8.0, cfg("0|1")) == 1.0


def test_ideal_table_is_zero_everywhere():
    table = ideal_table(["turbo_r14"], max_degree=3)
    for config in all_configs(2, 2):
        assert table.lookup("turbo_r14", -5.0, config) == 0.0
    assert table.lookup("turbo_r14", 0.0, InterferenceConfig.of(7, ERASED)) == 0.0


def test_build_per_table_sources():
    assert build_per_table("anchors").source == "anchors"
    assert build_per_table("collision", code_ids=["x"]).lookup("x", 0.0, cfg("1")) == 1.0
    assert build_per_table("parametric", snr_values=[8.0]).stored("turbo_r12", 8.0, cfg("0")) is not None
    with pytest.raises(PerTableError):
        build_per_table("parametric")
    with pytest.raises(PerTableError):
        build_per_table("files")
    with pytest.raises(PerTableError):
        build_per_table("measured")
