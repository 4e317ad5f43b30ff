"""Readers and aggregation for registry events, indicator tables, and
mobility metrics, plus the spatial join and frame construction feeding the
analytics modules.

Dirty registry rows are collected into a rejects report with line numbers
rather than aborting the load; conservation (rows in = records + rejects,
records = assigned + unassigned after the join) is an asserted invariant.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

import numpy as np

from .catalog import Catalog
from .errors import (
    EmptyFile,
    DuplicateKey,
    InsufficientUnits,
    SchemaMismatch,
    UnknownIndicator,
)
from .geo import GeoPoint, GeoUnit, Level, point_in_unit


class EventType(str, Enum):
    TEST = "test"
    CASE = "case"
    HOSPITALIZATION = "hospitalization"
    DEATH = "death"


class TestResult(str, Enum):
    POSITIVE = "positive"
    NEGATIVE = "negative"
    NA = "na"


class Outcome(str, Enum):
    TESTS = "tests"
    CASES = "cases"
    HOSPITALIZATIONS = "hospitalizations"
    DEATHS = "deaths"


class Calendar(str, Enum):
    DAILY = "daily"
    WEEKLY = "weekly"


class Impute(str, Enum):
    DROP = "drop"
    LEVEL_MEDIAN = "level_median"


AGE_BANDS = ("0-17", "18-44", "45-64", "65+", "U")
SEXES = ("F", "M", "U")

ALL_STRATUM = "all"

REGISTRY_HEADER = [
    "event_id", "date", "event_type", "result", "lat", "lon",
    "unit_id", "age_band", "sex", "race",
]
INDICATORS_HEADER = ["unit_id", "level", "indicator_key", "value"]
MOBILITY_HEADER = ["unit_id", "date", "metric_key", "value"]

MOBILITY_METRICS = ("pct_home", "median_away_minutes", "visits_per_capita")


@dataclass(frozen=True)
class EventRecord:
    event_id: str
    date: dt.date
    event_type: EventType
    result: TestResult
    point: Optional[GeoPoint]
    unit_id: Optional[str]
    age_band: str
    sex: str
    race: str


@dataclass(frozen=True)
class Reject:
    line: int
    reason: str


@dataclass
class RegistryLoad:
    records: list
    rejects: list  # Reject entries
    notes: list  # non-fatal observations, e.g. location precedence


@dataclass
class SpatialJoin:
    assigned: list
    unassigned: list


@dataclass(frozen=True)
class OutcomeSeries:
    outcome: Outcome
    level: Level
    unit_ids: tuple  # the full unit universe, ascending
    cells: dict  # (unit_id, bin date, stratum) -> count
    calendar: Calendar


@dataclass(frozen=True)
class IndicatorTable:
    level: Level
    values: dict  # (unit_id, indicator_key) -> float

    def unit_ids(self) -> list:
        return sorted({u for (u, _k) in self.values})

    def keys(self) -> list:
        return sorted({k for (_u, k) in self.values})


@dataclass(frozen=True)
class MobilitySeries:
    metrics: dict  # (unit_id, date, metric_key) -> float


@dataclass(frozen=True)
class AnalysisFrame:
    level: Level
    unit_ids: tuple
    y: np.ndarray
    X: np.ndarray
    predictor_keys: tuple
    date_window: tuple  # (start date, end date), inclusive

    def __post_init__(self):
        n = len(self.unit_ids)
        if self.y.shape != (n,):
            raise ValueError("y length must equal unit count")
        if self.X.shape[0] != n or self.X.shape[1] != len(self.predictor_keys):
            raise ValueError("X shape must be (units, predictors)")
        if not (np.all(np.isfinite(self.y)) and np.all(np.isfinite(self.X))):
            raise ValueError("frame must not contain missing values")

    @property
    def n(self) -> int:
        return len(self.unit_ids)

    @property
    def p(self) -> int:
        return len(self.predictor_keys)


def _read_rows(text: str, expected_header: list, what: str):
    if text.strip() == "":
        raise EmptyFile(f"{what} file is empty")
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if header != expected_header:
        missing = [c for c in expected_header if c not in header]
        detail = f"; missing column(s): {', '.join(missing)}" if missing else ""
        raise SchemaMismatch(f"{what} header {header!r} != {expected_header!r}{detail}")
    return reader


def load_registry(text: str) -> RegistryLoad:
    """Parse registry rows; invalid rows become rejects with line numbers."""
    reader = _read_rows(text, REGISTRY_HEADER, "registry")
    records, rejects, notes = [], [], []
    for lineno, row in enumerate(reader, start=2):
        if not row or all(f == "" for f in row):
            continue
        if len(row) != len(REGISTRY_HEADER):
            rejects.append(Reject(lineno, f"expected {len(REGISTRY_HEADER)} fields"))
            continue
        event_id, date_s, type_s, result_s, lat_s, lon_s, unit_id, age, sex, race = row
        if event_id == "":
            rejects.append(Reject(lineno, "missing event_id"))
            continue
        try:
            date = dt.date.fromisoformat(date_s)
        except ValueError:
            rejects.append(Reject(lineno, f"unparseable date {date_s!r}"))
            continue
        try:
            etype = EventType(type_s)
        except ValueError:
            rejects.append(Reject(lineno, f"unknown event_type {type_s!r}"))
            continue
        if result_s == "":
            result = TestResult.NA
        else:
            try:
                result = TestResult(result_s)
            except ValueError:
                rejects.append(Reject(lineno, f"unknown result {result_s!r}"))
                continue
        if etype is EventType.TEST and result is TestResult.NA:
            rejects.append(Reject(lineno, "test event without a result"))
            continue
        if etype is not EventType.TEST and result is not TestResult.NA:
            rejects.append(Reject(lineno, f"{etype.value} event carries a test result"))
            continue

        point = None
        if (lat_s == "") != (lon_s == ""):
            rejects.append(Reject(lineno, "lat/lon must be given together"))
            continue
        if lat_s != "":
            try:
                point = GeoPoint(lon=float(lon_s), lat=float(lat_s))
            except ValueError as exc:
                rejects.append(Reject(lineno, f"bad coordinates: {exc}"))
                continue
        unit = unit_id if unit_id != "" else None
        if unit is None and point is None:
            rejects.append(Reject(lineno, "no location: need lat/lon or unit_id"))
            continue
        if unit is not None and point is not None:
            notes.append(
                f"line {lineno}: both coordinates and unit_id given; unit_id wins"
            )
            point = None

        age = age if age != "" else "U"
        if age not in AGE_BANDS:
            rejects.append(Reject(lineno, f"unknown age_band {age!r}"))
            continue
        sex = sex if sex != "" else "U"
        if sex not in SEXES:
            rejects.append(Reject(lineno, f"unknown sex {sex!r}"))
            continue
        race = race if race != "" else "U"

        records.append(
            EventRecord(
                event_id=event_id, date=date, event_type=etype, result=result,
                point=point, unit_id=unit, age_band=age, sex=sex, race=race,
            )
        )
    return RegistryLoad(records=records, rejects=rejects, notes=notes)


def spatial_join(events: Sequence[EventRecord], units: Sequence[GeoUnit]) -> SpatialJoin:
    """Assign point-located events to containing units (closed boundaries,
    lowest unit_id wins on overlap); unmatched events land in `unassigned`."""
    levels = {u.level for u in units}
    if len(levels) != 1:
        raise ValueError("all units must share one level")
    ordered = sorted(units, key=lambda u: u.unit_id)
    known = {u.unit_id for u in units}
    bounds = [(u, u.bounds()) for u in ordered]
    assigned, unassigned = [], []
    for ev in events:
        if ev.unit_id is not None:
            (assigned if ev.unit_id in known else unassigned).append(ev)
            continue
        target = None
        for u, (min_lon, min_lat, max_lon, max_lat) in bounds:
            if not (min_lon <= ev.point.lon <= max_lon and min_lat <= ev.point.lat <= max_lat):
                continue
            if point_in_unit(ev.point, u):
                target = u.unit_id
                break
        if target is None:
            unassigned.append(ev)
        else:
            assigned.append(
                EventRecord(
                    event_id=ev.event_id, date=ev.date, event_type=ev.event_type,
                    result=ev.result, point=None, unit_id=target,
                    age_band=ev.age_band, sex=ev.sex, race=ev.race,
                )
            )
    return SpatialJoin(assigned=assigned, unassigned=unassigned)


def week_start(d: dt.date) -> dt.date:
    """Monday of the ISO week containing d."""
    return d - dt.timedelta(days=d.weekday())


def _strata(ev: EventRecord):
    return (
        ALL_STRATUM,
        f"age:{ev.age_band}",
        f"sex:{ev.sex}",
        f"race:{ev.race}",
    )


def aggregate_events(
    events: Sequence[EventRecord],
    level: Level,
    calendar: Calendar,
    unit_ids: Optional[Sequence[str]] = None,
) -> dict:
    """Counts per (unit, date bin, stratum) for each of the four outcomes.

    Tests counts every administered test; cases counts positive tests plus
    case events, de-duplicated by event_id; weekly bins start Monday.
    Strata are namespaced (`age:…`, `sex:…`, `race:…`) so the unknown code
    "U" stays distinct across dimensions; `all` is the unstratified total.
    """
    calendar = Calendar(calendar)
    for ev in events:
        if ev.unit_id is None:
            raise ValueError(f"event {ev.event_id} has no unit_id; run spatial_join")
    if unit_ids is None:
        universe = tuple(sorted({ev.unit_id for ev in events}))
    else:
        universe = tuple(sorted(unit_ids))
        known = set(universe)
        for ev in events:
            if ev.unit_id not in known:
                raise ValueError(f"event {ev.event_id} in unknown unit {ev.unit_id}")

    binf = (lambda d: d) if calendar is Calendar.DAILY else week_start
    cells: dict = {o: {} for o in Outcome}

    def bump(outcome: Outcome, ev: EventRecord):
        b = binf(ev.date)
        table = cells[outcome]
        for stratum in _strata(ev):
            key = (ev.unit_id, b, stratum)
            table[key] = table.get(key, 0) + 1

    seen_case_ids: set = set()
    for ev in events:
        if ev.event_type is EventType.TEST:
            bump(Outcome.TESTS, ev)
            if ev.result is TestResult.POSITIVE and ev.event_id not in seen_case_ids:
                seen_case_ids.add(ev.event_id)
                bump(Outcome.CASES, ev)
        elif ev.event_type is EventType.CASE:
            if ev.event_id not in seen_case_ids:
                seen_case_ids.add(ev.event_id)
                bump(Outcome.CASES, ev)
        elif ev.event_type is EventType.HOSPITALIZATION:
            bump(Outcome.HOSPITALIZATIONS, ev)
        else:
            bump(Outcome.DEATHS, ev)

    return {
        outcome: OutcomeSeries(
            outcome=outcome, level=level, unit_ids=universe,
            cells=cells[outcome], calendar=calendar,
        )
        for outcome in Outcome
    }


def load_indicators_csv(text: str, catalog: Catalog) -> dict:
    """Indicator tables keyed by level; keys validated against the catalog."""
    reader = _read_rows(text, INDICATORS_HEADER, "indicators")
    values: dict = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(f == "" for f in row):
            continue
        if len(row) != 4:
            raise SchemaMismatch(f"indicators line {lineno}: expected 4 fields")
        unit_id, level_s, key, value_s = row
        try:
            level = Level(level_s)
        except ValueError:
            raise SchemaMismatch(
                f"indicators line {lineno}: unknown level {level_s!r}"
            ) from None
        if key not in catalog:
            raise UnknownIndicator(
                f"indicators line {lineno}: key {key!r} not in catalog"
            )
        try:
            value = float(value_s)
        except ValueError:
            raise SchemaMismatch(
                f"indicators line {lineno}: bad value {value_s!r}"
            ) from None
        table = values.setdefault(level, {})
        cell = (unit_id, key)
        if cell in table:
            raise DuplicateKey(
                f"indicators line {lineno}: duplicate ({unit_id}, {key})"
            )
        table[cell] = value
    return {
        level: IndicatorTable(level=level, values=vals)
        for level, vals in values.items()
    }


def load_mobility_csv(text: str) -> MobilitySeries:
    reader = _read_rows(text, MOBILITY_HEADER, "mobility")
    metrics: dict = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(f == "" for f in row):
            continue
        if len(row) != 4:
            raise SchemaMismatch(f"mobility line {lineno}: expected 4 fields")
        unit_id, date_s, metric_key, value_s = row
        try:
            date = dt.date.fromisoformat(date_s)
        except ValueError:
            raise SchemaMismatch(
                f"mobility line {lineno}: unparseable date {date_s!r}"
            ) from None
        if metric_key not in MOBILITY_METRICS:
            raise SchemaMismatch(
                f"mobility line {lineno}: unknown metric_key {metric_key!r}"
            )
        try:
            value = float(value_s)
        except ValueError:
            raise SchemaMismatch(
                f"mobility line {lineno}: bad value {value_s!r}"
            ) from None
        if metric_key == "pct_home" and not (0.0 <= value <= 100.0):
            raise SchemaMismatch(
                f"mobility line {lineno}: pct_home {value} outside [0, 100]"
            )
        if metric_key != "pct_home" and value < 0.0:
            raise SchemaMismatch(f"mobility line {lineno}: {metric_key} negative")
        key = (unit_id, date, metric_key)
        if key in metrics:
            raise DuplicateKey(f"mobility line {lineno}: duplicate {key}")
        metrics[key] = value
    return MobilitySeries(metrics=metrics)


def consolidate(
    outcome: OutcomeSeries,
    indicators: IndicatorTable,
    predictors: Sequence[str],
    window: tuple,
    *,
    population: str = "population_total",
    per_capita: bool = True,
    impute: Impute = Impute.DROP,
) -> AnalysisFrame:
    """Join windowed outcome totals with indicator columns into one frame.

    y is the per-unit event total over the inclusive window, divided by
    population x 1e-5 when per_capita (rate per 100k).  Units missing any
    requested value are dropped or filled with the level median, per
    ``impute``.  Unit order is ascending.
    """
    if outcome.level != indicators.level:
        raise ValueError(
            f"outcome level {outcome.level} != indicators level {indicators.level}"
        )
    start, end = window
    if end < start:
        raise ValueError("empty window")
    impute = Impute(impute)
    predictors = list(predictors)
    table_keys = {k for (_u, k) in indicators.values}
    needed = predictors + ([population] if per_capita else [])
    for key in needed:
        if key not in table_keys:
            raise UnknownIndicator(f"indicator {key!r} absent from the table")

    units = list(outcome.unit_ids)
    totals = {u: 0.0 for u in units}
    for (unit_id, date, stratum), count in outcome.cells.items():
        if stratum == ALL_STRATUM and start <= date <= end:
            totals[unit_id] += count

    # level medians over observed values, for the impute path
    medians = {}
    if impute is Impute.LEVEL_MEDIAN:
        for key in needed:
            obs = [v for (_u, k), v in indicators.values.items() if k == key]
            medians[key] = float(np.median(obs)) if obs else None

    rows = []
    for u in units:
        vals = {}
        ok = True
        for key in needed:
            v = indicators.values.get((u, key))
            if v is None:
                if impute is Impute.LEVEL_MEDIAN and medians.get(key) is not None:
                    v = medians[key]
                else:
                    ok = False
                    break
            vals[key] = v
        if not ok:
            continue
        y = totals[u]
        if per_capita:
            pop = vals[population]
            if pop <= 0.0:
                continue
            y = y / (pop * 1e-5)
        rows.append((u, y, [vals[k] for k in predictors]))

    p = len(predictors)
    if len(rows) < p + 2:
        raise InsufficientUnits(
            f"{len(rows)} usable units < p+2 = {p + 2} for {p} predictors"
        )
    rows.sort(key=lambda r: r[0])
    return AnalysisFrame(
        level=outcome.level,
        unit_ids=tuple(r[0] for r in rows),
        y=np.array([r[1] for r in rows], dtype=float),
        X=np.array([r[2] for r in rows], dtype=float).reshape(len(rows), p),
        predictor_keys=tuple(predictors),
        date_window=(start, end),
    )
