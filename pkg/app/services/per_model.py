"""
Packet error rate model: the physical-layer abstraction of the decoder.

A PerTable maps (code_id, snr_db, interference configuration) to the
probability that a decoding attempt fails. Configurations are erased before
storage and lookup: a burst with more interferers than the erasure threshold
contributes nothing and is written ``E``.

Lookup rules, in order:
- unknown code -> PerLookupError
- stored (code, config): exact at stored SNRs, log10(PER) linear in SNR
  between them, clamped outside the stored range
- unknown config: nearest stored config (L1, erased = threshold + 1) that
  componentwise dominates it, worst PER on ties; 1.0 when none dominates

Table files are UTF-8 text, one row per entry: ``code_id,snr_db,config,per``
with config components joined by ``|``; ``#`` starts a comment line. A
``# erasure_threshold=N`` comment before the first row records the threshold
the file was written with.
"""
import itertools
import logging
import math
import re
from fractions import Fraction
from pathlib import Path
from typing import Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from app.models.frame import ERASED, InterferenceConfig
from app.models.schemas import REPLICA_CODE_ID, SIGNALLING_CODE_ID, SIGNALLING_RATE, code_id_for_rate

logger = logging.getLogger(__name__)

PerKey = Tuple[str, float, InterferenceConfig]

DEFAULT_ERASURE_THRESHOLD = 2
PER_FLOOR = 1e-6
HEADER = ("code_id", "snr_db", "config", "per")
THRESHOLD_LINE = re.compile(r"#\s*erasure_threshold\s*=\s*(\d+)\s*$")

# In-text anchors at 5 dB (0.109, 0.02, and the "< 1e-4" bounds stored as 1e-4).
ANCHOR_SNR_DB = 5.0
ANCHORS: Tuple[Tuple[str, float, str, float], ...] = (
    (SIGNALLING_CODE_ID, ANCHOR_SNR_DB, "1", 0.109),
    (SIGNALLING_CODE_ID, ANCHOR_SNR_DB, "0", 1e-4),
    ("turbo_r16", ANCHOR_SNR_DB, "1|2|E", 0.02),
    ("turbo_r14", ANCHOR_SNR_DB, "0|2", 1e-4),
    ("turbo_r14", ANCHOR_SNR_DB, "1|1", 1e-4),
)


class PerTable:
    """
    Immutable PER lookup table.

    Keys are stored in erased canonical form; a construction-time check
    enforces the range, SNR-monotonicity and dominance invariants unless
    ``validate=False``.

    The entries never change after construction. ``lookup`` fills two memo
    dicts (resolved PERs and fallback dominators); every value written is a
    pure function of the entries, so threads sharing one table can only
    race to store the same value.
    """

    def __init__(
        self,
        entries: Mapping[PerKey, float],
        erasure_threshold: int = DEFAULT_ERASURE_THRESHOLD,
        validate: bool = True,
        source: str = "<memory>",
    ):
        if erasure_threshold < 0:
            raise PerTableError(f"Erasure threshold must be >= 0, got {erasure_threshold}")
        self.erasure_threshold = erasure_threshold
        self.source = source
        self._entries: Dict[PerKey, float] = {}
        for (code_id, snr_db, config), per in entries.items():
            key = (code_id, float(snr_db), config.erase(erasure_threshold))
            if key in self._entries:
                raise PerTableError(f"Duplicate key {_key_text(key)} after erasure")
            self._entries[key] = float(per)
        if validate:
            validate_entries(self._entries)
        self._curves = self._build_curves()
        self._dominators: Dict[Tuple[str, InterferenceConfig], List[InterferenceConfig]] = {}
        self._memo: Dict[PerKey, float] = {}

    def _build_curves(self) -> Dict[str, Dict[InterferenceConfig, Tuple[np.ndarray, np.ndarray]]]:
        grouped: Dict[str, Dict[InterferenceConfig, List[Tuple[float, float]]]] = {}
        for (code_id, snr_db, config), per in self._entries.items():
            grouped.setdefault(code_id, {}).setdefault(config, []).append((snr_db, per))
        curves = {}
        for code_id, by_config in grouped.items():
            curves[code_id] = {}
            for config, points in by_config.items():
                points.sort()
                curves[code_id][config] = (
                    np.array([p[0] for p in points]),
                    np.array([p[1] for p in points]),
                )
        return curves

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, key: PerKey) -> bool:
        code_id, snr_db, config = key
        return (code_id, float(snr_db), config.erase(self.erasure_threshold)) in self._entries

    def __repr__(self) -> str:
        return (
            f"PerTable(entries={len(self._entries)}, codes={list(self.code_ids)}, "
            f"erasure_threshold={self.erasure_threshold}, source={self.source!r})"
        )

    @property
    def code_ids(self) -> Tuple[str, ...]:
        return tuple(sorted(self._curves))

    def items(self) -> Iterator[Tuple[PerKey, float]]:
        """Entries sorted by code, config length, config, SNR."""
        def order(item):
            (code_id, snr_db, config), _ = item
            return (code_id, len(config), [(c == ERASED, c) for c in config.counts], snr_db)
        return iter(sorted(self._entries.items(), key=order))

    def stored(self, code_id: str, snr_db: float, config: InterferenceConfig) -> Optional[float]:
        """Stored value for an exact key, or None."""
        return self._entries.get((code_id, float(snr_db), config.erase(self.erasure_threshold)))

    def snr_range(self, code_id: str) -> Tuple[float, float]:
        curves = self._require_code(code_id)
        lows = [snrs[0] for snrs, _ in curves.values()]
        highs = [snrs[-1] for snrs, _ in curves.values()]
        return float(min(lows)), float(max(highs))

    def merged(self, other: "PerTable") -> "PerTable":
        """Union of two tables sharing an erasure threshold; overlapping keys are an error."""
        if other.erasure_threshold != self.erasure_threshold:
            raise PerTableError(
                f"Cannot merge tables with erasure thresholds "
                f"{self.erasure_threshold} and {other.erasure_threshold}"
            )
        overlap = set(self._entries) & set(other._entries)
        if overlap:
            first = sorted(overlap, key=_key_text)[0]
            raise PerTableError(f"Duplicate key {_key_text(first)} in {other.source}")
        combined = dict(self._entries)
        combined.update(other._entries)
        return PerTable(
            combined,
            erasure_threshold=self.erasure_threshold,
            source=f"{self.source}+{other.source}",
        )

    def lookup(self, code_id: str, snr_db: float, config: InterferenceConfig) -> float:
        """Failure probability of one decoding attempt, in [0, 1]."""
        memo_key = (code_id, snr_db, config)
        cached = self._memo.get(memo_key)
        if cached is not None:
            return cached
        curves = self._require_code(code_id)
        erased = config.erase(self.erasure_threshold)
        curve = curves.get(erased)
        if curve is not None:
            per = _interpolate(curve, snr_db)
        else:
            per = self._fallback(code_id, curves, snr_db, erased)
        self._memo[memo_key] = per
        return per

    def _require_code(self, code_id: str):
        curves = self._curves.get(code_id)
        if curves is None:
            raise PerLookupError(f"Unknown code {code_id!r}; table has {list(self.code_ids)}")
        return curves

    def _fallback(self, code_id, curves, snr_db: float, config: InterferenceConfig) -> float:
        nearest = self._dominators.get((code_id, config))
        if nearest is None:
            weight = self.erasure_threshold + 1
            scored = [
                (stored.distance(config, weight), stored)
                for stored in curves
                if stored.dominates(config)
            ]
            if scored:
                best = min(d for d, _ in scored)
                nearest = [stored for d, stored in scored if d == best]
            else:
                nearest = []
            self._dominators[(code_id, config)] = nearest
        if not nearest:
            return 1.0
        return max(_interpolate(curves[stored], snr_db) for stored in nearest)


def _interpolate(curve: Tuple[np.ndarray, np.ndarray], snr_db: float) -> float:
    snrs, pers = curve
    if snr_db <= snrs[0]:
        return float(pers[0])
    if snr_db >= snrs[-1]:
        return float(pers[-1])
    hi = int(np.searchsorted(snrs, snr_db))
    if snrs[hi] == snr_db:
        return float(pers[hi])
    lo = hi - 1
    p_lo, p_hi = float(pers[lo]), float(pers[hi])
    frac = (snr_db - snrs[lo]) / (snrs[hi] - snrs[lo])
    if p_lo == 0.0 or p_hi == 0.0:
        return p_lo + frac * (p_hi - p_lo)
    log_per = math.log10(p_lo) + frac * (math.log10(p_hi) - math.log10(p_lo))
    return min(1.0, 10.0 ** log_per)


def lookup_per(table: PerTable, code_id: str, snr_db: float, config: InterferenceConfig) -> float:
    return table.lookup(code_id, snr_db, config)


def validate_entries(
    entries: Mapping[PerKey, float],
    lines: Optional[Mapping[PerKey, int]] = None,
) -> None:
    """
    Check the table invariants: PER in [0, 1], non-increasing in SNR per
    (code, config), and non-decreasing under dominance per (code, SNR).
    """
    lines = lines or {}
    for key, per in entries.items():
        if not 0.0 <= per <= 1.0 or math.isnan(per):
            raise PerTableError(f"PER {per} outside [0, 1] for {_key_text(key)}", lines.get(key))

    by_config: Dict[Tuple[str, InterferenceConfig], List[Tuple[float, PerKey]]] = {}
    by_snr: Dict[Tuple[str, float, int], List[PerKey]] = {}
    for key in entries:
        code_id, snr_db, config = key
        by_config.setdefault((code_id, config), []).append((snr_db, key))
        by_snr.setdefault((code_id, snr_db, len(config)), []).append(key)

    for points in by_config.values():
        points.sort()
        for (_, prev), (_, cur) in zip(points, points[1:]):
            if entries[cur] > entries[prev]:
                raise PerTableError(
                    f"PER rises with SNR: {_key_text(prev)}={entries[prev]} "
                    f"then {_key_text(cur)}={entries[cur]}",
                    lines.get(cur),
                )

    for keys in by_snr.values():
        for high, low in itertools.permutations(keys, 2):
            if high[2].dominates(low[2]) and entries[high] < entries[low]:
                offender = max((high, low), key=lambda k: lines.get(k, 0))
                raise PerTableError(
                    f"Dominance violated: {_key_text(high)}={entries[high]} is below "
                    f"{_key_text(low)}={entries[low]}",
                    lines.get(offender),
                )


def _read_rows(path: Path) -> Tuple[List[Tuple[int, List[str]]], Optional[Tuple[int, int]]]:
    """Data rows as (line number, fields) and the declared (threshold, line), if any."""
    rows: List[Tuple[int, List[str]]] = []
    declared: Optional[Tuple[int, int]] = None
    with open(path, "rb") as handle:
        for lineno, raw in enumerate(handle, start=1):
            try:
                text = raw.decode("utf-8-sig" if lineno == 1 else "utf-8").strip()
            except UnicodeDecodeError as e:
                raise PerTableError(f"{path}: not valid UTF-8 ({e.reason})", lineno) from e
            if not text:
                continue
            if text.startswith("#"):
                match = THRESHOLD_LINE.match(text)
                if match is None:
                    continue
                if rows:
                    raise PerTableError(f"{path}: erasure_threshold must precede the first row", lineno)
                value = int(match.group(1))
                if declared is not None and declared[0] != value:
                    raise PerTableError(
                        f"{path}: erasure_threshold={value} conflicts with line {declared[1]}", lineno
                    )
                declared = (value, lineno)
                continue
            fields = [f.strip() for f in text.split(",")]
            if fields[0] == HEADER[0]:
                continue
            rows.append((lineno, fields))
    return rows, declared


def load_per_table(
    path: Union[str, Path],
    erasure_threshold: Optional[int] = None,
) -> PerTable:
    """
    Parse a table file; every error names its line.

    The erasure threshold comes from the file's ``# erasure_threshold=N``
    line when present, else from ``erasure_threshold``, else the default of
    2. A file threshold that differs from an explicit argument is an error.
    """
    path = Path(path)
    if not path.is_file():
        raise PerTableError(f"PER table file not found: {path}")
    rows, declared = _read_rows(path)
    if declared is None:
        threshold = DEFAULT_ERASURE_THRESHOLD if erasure_threshold is None else erasure_threshold
    elif erasure_threshold is not None and erasure_threshold != declared[0]:
        raise PerTableError(
            f"{path}: file declares erasure_threshold={declared[0]}, expected {erasure_threshold}",
            declared[1],
        )
    else:
        threshold = declared[0]

    entries: Dict[PerKey, float] = {}
    lines: Dict[PerKey, int] = {}
    for lineno, fields in rows:
        if len(fields) != 4:
            raise PerTableError(f"{path}: expected 4 fields, got {len(fields)}", lineno)
        code_id, snr_text, config_text, per_text = fields
        try:
            snr_db = float(snr_text)
            per = float(per_text)
            config = InterferenceConfig.parse(config_text).erase(threshold)
        except ValueError as e:
            raise PerTableError(f"{path}: {e}", lineno) from e
        if not code_id:
            raise PerTableError(f"{path}: empty code_id", lineno)
        key = (code_id, snr_db, config)
        if key in entries:
            raise PerTableError(
                f"{path}: duplicate key {_key_text(key)} (first on line {lines[key]})", lineno
            )
        entries[key] = per
        lines[key] = lineno
    validate_entries(entries, lines)
    logger.info("Loaded PER table %s (%d entries)", path, len(entries))
    return PerTable(entries, erasure_threshold=threshold, validate=False, source=str(path))


def load_per_tables(
    paths: Sequence[Union[str, Path]],
    erasure_threshold: Optional[int] = None,
) -> PerTable:
    """Load and merge several table files; they must share an erasure threshold."""
    if not paths:
        raise PerTableError("No PER table files given")
    table = load_per_table(paths[0], erasure_threshold)
    for path in paths[1:]:
        table = table.merged(load_per_table(path, erasure_threshold))
    return table


def write_per_table(
    table: PerTable,
    path: Union[str, Path],
    comments: Iterable[str] = (),
    float_format: str = "%.6g",
) -> None:
    """Write ``table`` in the format ``load_per_table`` reads."""
    rows = [
        {"code_id": code_id, "snr_db": snr_db, "config": config.to_field(), "per": per}
        for (code_id, snr_db, config), per in table.items()
    ]
    frame = pd.DataFrame(rows, columns=list(HEADER))
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as handle:
        for comment in comments:
            handle.write(f"# {comment}\n")
        handle.write(f"# erasure_threshold={table.erasure_threshold}\n")
        frame.to_csv(handle, index=False, float_format=float_format)


def builtin_anchor_table() -> PerTable:
    """The values quoted in the text at 5 dB, and nothing else."""
    entries = {
        (code_id, snr_db, InterferenceConfig.parse(config)): per
        for code_id, snr_db, config, per in ANCHORS
    }
    return PerTable(entries, source="anchors")


def collision_channel_table(code_ids: Iterable[str], max_degree: int = 16) -> PerTable:
    """Decode iff every burst is clean: PER 0 for all-zero configs, 1 otherwise."""
    entries = {
        (code_id, 0.0, InterferenceConfig((0,) * length)): 0.0
        for code_id in code_ids
        for length in range(1, max_degree + 1)
    }
    return PerTable(entries, source="collision")


def ideal_table(code_ids: Iterable[str], max_degree: int = 16) -> PerTable:
    """PER 0 everywhere: the all-erased key of each length dominates every config."""
    entries = {
        (code_id, 0.0, InterferenceConfig((ERASED,) * length)): 0.0
        for code_id in code_ids
        for length in range(1, max_degree + 1)
    }
    return PerTable(entries, source="ideal")


# ---------------------------------------------------------------------------
# Parametric extension
# ---------------------------------------------------------------------------

def burst_information(interferers: int, snr_db: float) -> float:
    """Bits/symbol of one burst with interference treated as noise; 0 when erased."""
    if interferers == ERASED:
        return 0.0
    gamma = 10.0 ** (snr_db / 10.0)
    return math.log2(1.0 + 1.0 / (interferers + 1.0 / gamma))


def config_information(config: InterferenceConfig, snr_db: float) -> float:
    return math.fsum(burst_information(c, snr_db) for c in config.counts)


def fit_logistic(
    anchor_high: Tuple[float, float],
    anchor_low: Tuple[float, float],
) -> Tuple[float, float]:
    """
    Slope ``a`` and offset ``b`` of PER = expit(-a (x - b)) through two
    (margin x, PER) points, where x is information minus rate.
    """
    (x1, p1), (x2, p2) = anchor_high, anchor_low
    if x1 == x2:
        raise ValueError("Anchors need distinct margins")
    a = float((logit(p1) - logit(p2)) / (x2 - x1))
    b = float(x1 + logit(p1) / a)
    return a, b


class ParametricCurve:
    """Logistic PER in the information margin, fitted through two anchor configurations."""

    def __init__(self, need: float, anchors: Sequence[Tuple[str, float, float]]):
        self.need = float(need)
        (c1, s1, p1), (c2, s2, p2) = anchors
        x1 = config_information(InterferenceConfig.parse(c1), s1) - self.need
        x2 = config_information(InterferenceConfig.parse(c2), s2) - self.need
        self.a, self.b = fit_logistic((x1, p1), (x2, p2))

    def per(self, config: InterferenceConfig, snr_db: float) -> float:
        info = config_information(config, snr_db)
        if info == 0.0:
            return 1.0
        value = float(expit(-self.a * (info - self.need - self.b)))
        return min(1.0, max(PER_FLOOR, value))


# Default data codes carry R_d N_b log2 M = 1 bit per slot; the signalling code R_s.
TURBO_CURVE = ParametricCurve(1.0, [("1|2|E", ANCHOR_SNR_DB, 0.02), ("1|1", ANCHOR_SNR_DB, 1e-4)])
SIGNALLING_CURVE = ParametricCurve(
    float(SIGNALLING_RATE), [("1", ANCHOR_SNR_DB, 0.109), ("0", ANCHOR_SNR_DB, 1e-4)]
)


def all_configs(length: int, erasure_threshold: int) -> List[InterferenceConfig]:
    """Every canonical config of ``length`` bursts over {0..threshold, E}."""
    alphabet = list(range(erasure_threshold + 1)) + [ERASED]
    return [
        InterferenceConfig(combo)
        for combo in itertools.combinations_with_replacement(alphabet, length)
    ]


def parametric_table(
    snr_values: Iterable[float],
    max_degree: int = 3,
    erasure_threshold: int = DEFAULT_ERASURE_THRESHOLD,
) -> PerTable:
    """
    Full table for the default profile family and the signalling code:
    ``turbo_r1{2d}`` for d = 1..max_degree and ``rm_14_64``.
    """
    snrs = sorted({float(s) for s in snr_values})
    if not snrs:
        raise PerTableError("parametric_table needs at least one SNR")
    entries: Dict[PerKey, float] = {}
    for degree in range(1, max_degree + 1):
        code_id = code_id_for_rate(Fraction(1, 2 * degree))
        for config in all_configs(degree, erasure_threshold):
            for snr_db in snrs:
                entries[(code_id, snr_db, config)] = TURBO_CURVE.per(config, snr_db)
    for config in all_configs(1, erasure_threshold):
        for snr_db in snrs:
            entries[(SIGNALLING_CODE_ID, snr_db, config)] = SIGNALLING_CURVE.per(config, snr_db)
    return PerTable(entries, erasure_threshold=erasure_threshold, source="parametric")


PER_SOURCES = ("parametric", "anchors", "collision", "ideal", "files")


def build_per_table(
    source: str,
    snr_values: Iterable[float] = (),
    code_ids: Iterable[str] = (REPLICA_CODE_ID, SIGNALLING_CODE_ID),
    paths: Sequence[Union[str, Path]] = (),
    max_degree: int = 3,
    erasure_threshold: Optional[int] = None,
) -> PerTable:
    """
    Table for one of the named PER sources. ``erasure_threshold=None`` means
    the default for built-in tables and the files' own declaration for files.
    """
    if source == "parametric":
        threshold = DEFAULT_ERASURE_THRESHOLD if erasure_threshold is None else erasure_threshold
        return parametric_table(snr_values, max_degree=max_degree, erasure_threshold=threshold)
    if source == "anchors":
        return builtin_anchor_table()
    if source == "collision":
        return collision_channel_table(code_ids, max_degree=max(16, max_degree))
    if source == "ideal":
        return ideal_table(code_ids, max_degree=max(16, max_degree))
    if source == "files":
        return load_per_tables(paths, erasure_threshold=erasure_threshold)
    raise PerTableError(f"Unknown PER source {source!r}; expected one of {PER_SOURCES}")


def _key_text(key: PerKey) -> str:
    code_id, snr_db, config = key
    return f"({code_id}, {snr_db:g} dB, {config})"


class PerTableError(Exception):
    """Raised when a PER table cannot be built or loaded."""

    def __init__(self, message: str, line: Optional[int] = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class PerLookupError(Exception):
    """Raised when a lookup names a code the table does not hold."""
    pass
