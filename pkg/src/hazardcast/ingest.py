"""Daily weather and storm-event CSVs down to model-ready county tables.

Pipeline: parse station observations and severe-event records, aggregate
stations to a county-day grid, filter light events out, stamp per-day hazard
indicators, sum them over the forward window into count targets, and
standardize features with statistics fitted on the training date range only.
"""

from __future__ import annotations

import csv
import datetime as dt
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hazards import DEFAULT_TYPE_MAP, HAZARDS, N_HAZARDS, hazard_index

logger = logging.getLogger(__name__)

CONSTANT_STD_FLOOR = 1e-12


class IngestError(Exception):
    """Data-level failure; the CLI maps these to exit code 2."""


class HeaderError(IngestError):
    pass


class RowError(IngestError):
    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NotFittedError(IngestError):
    pass


@dataclass
class ClimateRecord:
    """One station-day of raw observations; absent measurements stay None."""

    station_id: str
    date: dt.date
    values: dict[str, float | None]


@dataclass
class HazardEvent:
    begin_date: dt.date
    end_date: dt.date
    raw_type: str
    hazard: str
    county: str
    property_damage_usd: float = 0.0
    crop_damage_usd: float = 0.0
    injuries: int = 0
    deaths: int = 0


@dataclass
class EventParseStats:
    dropped_unmapped: int = 0
    damage_defaults: int = 0


@dataclass
class SeverityPolicy:
    """Keep an event if its total damage reaches the threshold (inclusive)
    or, when enabled, if it caused any injury or death."""

    min_damage_usd: float = 10000.0
    keep_if_casualties: bool = True

    def __post_init__(self):
        if self.min_damage_usd < 0:
            raise ValueError(f"min_damage_usd must be nonnegative, got {self.min_damage_usd}")


@dataclass
class Standardizer:
    """Per-feature zero-mean unit-variance transform (population std).

    Features whose std is below ``CONSTANT_STD_FLOOR`` are flagged constant
    and transform to all-zeros; ``invert`` maps them back to their mean.
    """

    feature_names: list[str]
    means: np.ndarray
    stds: np.ndarray
    constant: np.ndarray
    train_range: tuple[dt.date, dt.date] | None = None

    @classmethod
    def fit(cls, table: "CountyDayTable",
            train_date_range: tuple[dt.date, dt.date] | None = None) -> "Standardizer":
        rows = table.features
        if train_date_range is not None:
            lo, hi = train_date_range
            mask = np.array([lo <= d <= hi for d in table.dates])
            if not mask.any():
                raise IngestError(f"no table rows inside the fit range {lo}..{hi}")
            rows = rows[mask]
        means = rows.mean(axis=0)
        stds = rows.std(axis=0)  # population (ddof=0)
        constant = stds < CONSTANT_STD_FLOOR
        return cls(list(table.feature_names), means, stds, constant, train_date_range)

    def transform(self, features: np.ndarray) -> np.ndarray:
        out = (features - self.means) / np.where(self.constant, 1.0, self.stds)
        out[:, self.constant] = 0.0
        return out

    def invert(self, standardized: np.ndarray) -> np.ndarray:
        out = standardized * np.where(self.constant, 0.0, self.stds) + self.means
        return out

    def to_dict(self) -> dict:
        return {
            "feature_names": list(self.feature_names),
            "means": self.means.tolist(),
            "stds": self.stds.tolist(),
            "constant": [bool(c) for c in self.constant],
            "train_range": [d.isoformat() for d in self.train_range] if self.train_range else None,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Standardizer":
        rng = d.get("train_range")
        return cls(
            feature_names=list(d["feature_names"]),
            means=np.asarray(d["means"], dtype=np.float64),
            stds=np.asarray(d["stds"], dtype=np.float64),
            constant=np.asarray(d["constant"], dtype=bool),
            train_range=tuple(dt.date.fromisoformat(x) for x in rng) if rng else None,
        )


@dataclass
class CountyDayTable:
    """Contiguous per-day feature matrix with 6-hazard forward-count targets.

    ``targets`` covers only the first ``n_days - window_days`` rows; the
    final ``window_days`` rows have no forward window and never anchor a
    training sample.
    """

    county: str
    dates: list[dt.date]
    feature_names: list[str]
    features: np.ndarray                      # (n_days, F) float64
    targets: np.ndarray | None = None         # (n_labeled, 6) int64
    window_days: int | None = None
    standardizer: Standardizer | None = field(default=None, repr=False)

    @property
    def n_days(self) -> int:
        return len(self.dates)

    @property
    def n_labeled(self) -> int:
        if self.targets is None:
            raise ValueError("table has no targets yet")
        return len(self.targets)

    def save(self, path, config_echo: dict | None = None) -> None:
        """CSV of date, features and target columns, plus a JSON sidecar with
        feature names, standardizer statistics and a config echo."""
        path = Path(path)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["date", *self.feature_names,
                             *[f"target_{h}" for h in HAZARDS]])
            for i, day in enumerate(self.dates):
                row = [day.isoformat()] + [repr(float(v)) for v in self.features[i]]
                if self.targets is not None and i < len(self.targets):
                    row += [str(int(t)) for t in self.targets[i]]
                else:
                    row += [""] * N_HAZARDS
                writer.writerow(row)
        sidecar = {
            "county": self.county,
            "window_days": self.window_days,
            "feature_names": list(self.feature_names),
            "standardizer": self.standardizer.to_dict() if self.standardizer else None,
            "config": config_echo,
        }
        self.sidecar_path(path).write_text(json.dumps(sidecar, indent=2) + "\n", encoding="utf-8")

    @staticmethod
    def sidecar_path(path) -> Path:
        path = Path(path)
        return path.with_name(path.stem + ".meta.json")

    @classmethod
    def load(cls, path) -> "CountyDayTable":
        path = Path(path)
        sidecar_file = cls.sidecar_path(path)
        if not sidecar_file.exists():
            raise IngestError(f"missing table sidecar {sidecar_file}")
        meta = json.loads(sidecar_file.read_text(encoding="utf-8"))
        feature_names = list(meta["feature_names"])

        dates, feats, targets = [], [], []
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise IngestError(f"{path}: empty table file")
            expected = ["date", *feature_names, *[f"target_{h}" for h in HAZARDS]]
            if header != expected:
                raise IngestError(f"{path}: header does not match sidecar feature names")
            for row in reader:
                dates.append(dt.date.fromisoformat(row[0]))
                feats.append([float(v) for v in row[1:1 + len(feature_names)]])
                tcells = row[1 + len(feature_names):]
                targets.append([int(v) for v in tcells] if tcells[0] != "" else None)

        _check_contiguous(dates, path)
        window_days = meta.get("window_days")
        labeled = [t for t in targets if t is not None]
        if window_days is not None:
            if any(t is not None for t in targets[len(labeled):]):
                raise IngestError(f"{path}: labeled rows must form a prefix")
            if len(labeled) != len(dates) - window_days:
                raise IngestError(f"{path}: expected {len(dates) - window_days} labeled rows, "
                                  f"found {len(labeled)}")
        std = meta.get("standardizer")
        return cls(
            county=meta["county"],
            dates=dates,
            feature_names=feature_names,
            features=np.asarray(feats, dtype=np.float64),
            targets=np.asarray(labeled, dtype=np.int64) if window_days is not None else None,
            window_days=window_days,
            standardizer=Standardizer.from_dict(std) if std else None,
        )


def _check_contiguous(dates: list[dt.date], context="table") -> None:
    for a, b in zip(dates, dates[1:]):
        if (b - a).days != 1:
            raise IngestError(f"{context}: dates not contiguous around {a} -> {b}")


def _iter_lines(source):
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8", newline="") as fh:
            yield from fh
    else:
        yield from source


def parse_daily_weather(source, errors: str = "raise") -> list[ClimateRecord]:
    """Parse a daily-observation CSV into one record per station-day.

    The header must contain STATION and DATE; every other column is kept as
    a feature. Empty cells become missing values. Bad rows either raise a
    RowError naming the 1-based line number or, with errors="skip", are
    dropped with a warning.
    """
    if errors not in ("raise", "skip"):
        raise ValueError(f"errors must be 'raise' or 'skip', got {errors!r}")
    reader = csv.reader(_iter_lines(source))
    header = next(reader, None)
    if header is None:
        raise HeaderError("weather CSV is empty")
    columns = [c.strip().upper() for c in header]
    if "STATION" not in columns or "DATE" not in columns:
        raise HeaderError(f"weather CSV header must contain STATION and DATE, got {columns}")
    station_col = columns.index("STATION")
    date_col = columns.index("DATE")
    feature_cols = [(i, name) for i, name in enumerate(columns)
                    if i not in (station_col, date_col)]

    records = []
    for line, row in enumerate(reader, start=2):
        try:
            if len(row) != len(columns):
                raise RowError(line, f"expected {len(columns)} cells, got {len(row)}")
            try:
                day = dt.date.fromisoformat(row[date_col].strip())
            except ValueError:
                raise RowError(line, f"malformed date {row[date_col]!r}") from None
            values: dict[str, float | None] = {}
            for i, name in feature_cols:
                cell = row[i].strip()
                if cell == "":
                    values[name] = None
                    continue
                try:
                    values[name] = float(cell)
                except ValueError:
                    raise RowError(line, f"non-numeric value {cell!r} for {name}") from None
            records.append(ClimateRecord(row[station_col].strip(), day, values))
        except RowError as e:
            if errors == "raise":
                raise
            logger.warning("skipping weather row: %s", e)
    return records


_EVENT_COLUMNS = ("BEGIN_DATE", "END_DATE", "EVENT_TYPE", "CZ_NAME", "DAMAGE_PROPERTY",
                  "DAMAGE_CROPS", "INJURIES_DIRECT", "DEATHS_DIRECT")


def _parse_event_date(cell: str) -> dt.date:
    cell = cell.strip()
    for fmt in ("%m/%d/%Y",):
        try:
            return dt.datetime.strptime(cell, fmt).date()
        except ValueError:
            pass
    return dt.date.fromisoformat(cell)


def parse_damage(cell: str) -> float | None:
    """'10.00K' -> 10000.0; K/M/B suffixes; None when unparseable."""
    s = cell.strip().upper()
    if s == "":
        return 0.0
    mult = 1.0
    if s[-1] in "KMB":
        mult = {"K": 1e3, "M": 1e6, "B": 1e9}[s[-1]]
        s = s[:-1]
    try:
        value = float(s) * mult
    except ValueError:
        return None
    return value if value >= 0 else None


def parse_storm_events(source, type_map: dict[str, str] | None = None,
                       damage_errors: str = "zero") -> tuple[list[HazardEvent], EventParseStats]:
    """Parse a storm-event CSV; rows with unmapped event types are dropped
    and counted in the returned stats.

    Unparseable damage strings default to 0 with a counted warning, or raise
    when damage_errors="raise".
    """
    if damage_errors not in ("zero", "raise"):
        raise ValueError(f"damage_errors must be 'zero' or 'raise', got {damage_errors!r}")
    tmap = {k.strip().lower(): v for k, v in (type_map or DEFAULT_TYPE_MAP).items()}
    for target in tmap.values():
        if target not in HAZARDS:
            raise ValueError(f"type_map target {target!r} is not one of {HAZARDS}")

    reader = csv.reader(_iter_lines(source))
    header = next(reader, None)
    if header is None:
        raise HeaderError("events CSV is empty")
    columns = [c.strip().upper() for c in header]
    missing = [c for c in _EVENT_COLUMNS if c not in columns]
    if missing:
        raise HeaderError(f"events CSV header missing columns: {missing}")
    idx = {c: columns.index(c) for c in _EVENT_COLUMNS}

    events = []
    stats = EventParseStats()
    for line, row in enumerate(reader, start=2):
        if len(row) != len(columns):
            raise RowError(line, f"expected {len(columns)} cells, got {len(row)}")
        raw_type = row[idx["EVENT_TYPE"]].strip()
        hazard = tmap.get(raw_type.lower())
        if hazard is None:
            stats.dropped_unmapped += 1
            continue
        try:
            begin = _parse_event_date(row[idx["BEGIN_DATE"]])
            end = _parse_event_date(row[idx["END_DATE"]])
        except ValueError:
            raise RowError(line, "malformed event date") from None
        if begin > end:
            raise RowError(line, f"begin date {begin} after end date {end}")

        damages = []
        for col in ("DAMAGE_PROPERTY", "DAMAGE_CROPS"):
            value = parse_damage(row[idx[col]])
            if value is None:
                if damage_errors == "raise":
                    raise RowError(line, f"unparseable damage {row[idx[col]]!r}")
                stats.damage_defaults += 1
                value = 0.0
            damages.append(value)
        try:
            injuries = int(float(row[idx["INJURIES_DIRECT"]].strip() or 0))
            deaths = int(float(row[idx["DEATHS_DIRECT"]].strip() or 0))
        except ValueError:
            raise RowError(line, "non-numeric casualty count") from None

        events.append(HazardEvent(
            begin_date=begin, end_date=end, raw_type=raw_type, hazard=hazard,
            county=row[idx["CZ_NAME"]].strip(), property_damage_usd=damages[0],
            crop_damage_usd=damages[1], injuries=injuries, deaths=deaths))
    return events, stats


def filter_severity(events: list[HazardEvent],
                    policy: SeverityPolicy | None = None) -> list[HazardEvent]:
    """Drop light events; order-preserving and idempotent."""
    policy = policy or SeverityPolicy()
    return [e for e in events
            if (e.property_damage_usd + e.crop_damage_usd) >= policy.min_damage_usd
            or (policy.keep_if_casualties and (e.injuries + e.deaths) > 0)]


def _fill_gaps(col: np.ndarray, max_gap_days: int) -> np.ndarray:
    """Linear interpolation of interior missing runs up to max_gap_days long."""
    present = np.flatnonzero(~np.isnan(col))
    if present.size < 2:
        return col
    out = col.copy()
    for a, b in zip(present[:-1], present[1:]):
        gap = b - a - 1
        if 0 < gap <= max_gap_days:
            out[a + 1:b] = np.linspace(col[a], col[b], gap + 2)[1:-1]
    return out


def aggregate_to_county(records: list[ClimateRecord], county: str,
                        station_ids: set[str] | None = None,
                        max_missing_frac: float = 0.1, max_gap_days: int = 3,
                        min_days: int | None = None) -> CountyDayTable:
    """Merge station records into one contiguous county-day table.

    Per day and feature: the unweighted mean over stations reporting it.
    Features missing more often than max_missing_frac are dropped entirely;
    interior gaps up to max_gap_days are linearly interpolated; days still
    missing anything are dropped, which must not break date contiguity.
    """
    if not 0 <= max_missing_frac <= 1:
        raise ValueError(f"max_missing_frac must be in [0, 1], got {max_missing_frac}")
    if station_ids is not None:
        records = [r for r in records if r.station_id in station_ids]
    if not records:
        raise IngestError(f"no weather records for county {county!r}")

    first = min(r.date for r in records)
    last = max(r.date for r in records)
    n = (last - first).days + 1
    names = sorted({name for r in records for name in r.values})
    sums = np.zeros((n, len(names)))
    counts = np.zeros((n, len(names)), dtype=np.int64)
    col = {name: j for j, name in enumerate(names)}
    for r in records:
        i = (r.date - first).days
        for name, value in r.values.items():
            if value is not None:
                sums[i, col[name]] += value
                counts[i, col[name]] += 1

    with np.errstate(invalid="ignore"):
        values = np.where(counts > 0, sums / np.maximum(counts, 1), np.nan)

    missing_frac = (counts == 0).mean(axis=0)
    keep = missing_frac <= max_missing_frac
    if not keep.any():
        raise IngestError(
            f"all {len(names)} features exceed the missing-value budget "
            f"({max_missing_frac:.0%}); nothing left to model")
    dropped = [name for name, k in zip(names, keep) if not k]
    if dropped:
        logger.info("dropping features with too many missing values: %s", dropped)
    values = values[:, keep]
    names = [name for name, k in zip(names, keep) if k]

    for j in range(values.shape[1]):
        values[:, j] = _fill_gaps(values[:, j], max_gap_days)

    valid = ~np.isnan(values).any(axis=1)
    if not valid.any():
        raise IngestError("every day is missing at least one feature after interpolation")
    valid_idx = np.flatnonzero(valid)
    if np.any(np.diff(valid_idx) != 1):
        raise IngestError(
            "dropping days with unrecoverable missing values leaves a non-contiguous "
            "date range; raise max_gap_days or max_missing_frac, or split the period")
    values = values[valid_idx]
    dates = [first + dt.timedelta(days=int(i)) for i in valid_idx]

    if min_days is not None and len(dates) < min_days:
        raise IngestError(
            f"county table has only {len(dates)} usable days; at least {min_days} are "
            f"needed (twice the maximum sequence length) to window and split the data")
    return CountyDayTable(county=county, dates=dates, feature_names=names, features=values)


def build_targets(table: CountyDayTable, events: list[HazardEvent],
                  window_days: int = 14) -> CountyDayTable:
    """Stamp daily hazard indicators and sum them over the forward window.

    An event spanning [b, e] indicates its hazard on every day of the span;
    targets[d][h] counts indicated days in (d, d + window_days]. Only events
    matching the table's county (case-insensitive) contribute. The final
    window_days rows get no targets.
    """
    if window_days < 1:
        raise ValueError(f"window_days must be >= 1, got {window_days}")
    if window_days >= table.n_days:
        raise IngestError(f"forward window of {window_days} days does not fit a table "
                          f"of {table.n_days} days")
    first = table.dates[0]
    n = table.n_days
    indicator = np.zeros((n, N_HAZARDS), dtype=np.int64)
    for ev in events:
        if ev.county and table.county and ev.county.upper() != table.county.upper():
            continue
        h = hazard_index(ev.hazard)
        lo = max((ev.begin_date - first).days, 0)
        hi = min((ev.end_date - first).days, n - 1)
        if hi < 0 or lo > n - 1:
            continue
        indicator[lo:hi + 1, h] = 1

    prefix = np.zeros((n + 1, N_HAZARDS), dtype=np.int64)
    np.cumsum(indicator, axis=0, out=prefix[1:])
    n_labeled = n - window_days
    targets = prefix[window_days + 1:window_days + 1 + n_labeled] - prefix[1:1 + n_labeled]

    return CountyDayTable(county=table.county, dates=list(table.dates),
                          feature_names=list(table.feature_names),
                          features=table.features.copy(), targets=targets,
                          window_days=window_days, standardizer=table.standardizer)


def fit_standardizer(table: CountyDayTable,
                     train_date_range: tuple[dt.date, dt.date] | None = None) -> Standardizer:
    """Fit per-feature mean/std on rows inside the training date range only."""
    return Standardizer.fit(table, train_date_range)


def apply_standardizer(table: CountyDayTable,
                       standardizer: Standardizer | None = None) -> CountyDayTable:
    """Return a copy of the table with standardized features attached."""
    std = standardizer or table.standardizer
    if std is None:
        raise NotFittedError("apply_standardizer called before fit_standardizer")
    if list(std.feature_names) != list(table.feature_names):
        raise IngestError(f"standardizer features {std.feature_names} do not match "
                          f"table features {table.feature_names}")
    return CountyDayTable(county=table.county, dates=list(table.dates),
                          feature_names=list(table.feature_names),
                          features=std.transform(table.features),
                          targets=None if table.targets is None else table.targets.copy(),
                          window_days=table.window_days, standardizer=std)
