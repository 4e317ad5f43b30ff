"""Deterministic synthetic input generator for walkthroughs and end-to-end
tests: a 50-tract grid city, a registry of ~5000 events with a post-
intervention decline, indicator tables with known association signs, weekly
mobility metrics, a domain-knowledge whitelist, and service tokens.
"""

from __future__ import annotations

import csv
import datetime as dt
import io
import json
import math
from pathlib import Path

import numpy as np

from .ingest import REGISTRY_HEADER, INDICATORS_HEADER, MOBILITY_HEADER

GRID_COLS = 10
GRID_ROWS = 5
LON0, LAT0 = -90.1, 35.0
CELL = 0.05

START = dt.date(2020, 2, 3)
END = dt.date(2020, 6, 28)
INTERVENTION = dt.date(2020, 5, 4)

AGE_P = (0.20, 0.35, 0.25, 0.15, 0.05)
SEX_P = (0.48, 0.47, 0.05)
RACE_CODES = ("w", "b", "h", "a", "U")
RACE_P = (0.45, 0.30, 0.12, 0.08, 0.05)

INDICATOR_KEYS = (
    "pct_hs_diploma",
    "housing_units",
    "pct_no_vehicle",
    "pct_poverty",
    "pct_over_65",
    "pct_public_transit",
    "air_quality_index",
    "pct_internet_access",
)


def _unit_id(idx: int) -> str:
    return f"T{idx:03d}"


def _cell_origin(idx: int) -> tuple:
    row, col = divmod(idx, GRID_COLS)
    return LON0 + col * CELL, LAT0 + row * CELL


def _grid_geojson() -> dict:
    feats = []
    for idx in range(GRID_COLS * GRID_ROWS):
        lon, lat = _cell_origin(idx)
        ring = [
            [lon, lat],
            [lon + CELL, lat],
            [lon + CELL, lat + CELL],
            [lon, lat + CELL],
            [lon, lat],
        ]
        feats.append(
            {
                "type": "Feature",
                "properties": {"unit_id": _unit_id(idx), "level": "tract"},
                "geometry": {"type": "Polygon", "coordinates": [ring]},
            }
        )
    return {"type": "FeatureCollection", "features": feats}


def _zscore(v: np.ndarray) -> np.ndarray:
    return (v - v.mean()) / v.std(ddof=0)


def _indicators(rng: np.random.Generator) -> dict:
    n = GRID_COLS * GRID_ROWS
    table = {
        "population_total": np.round(rng.uniform(2000, 8000, n)),
        "pct_hs_diploma": np.round(rng.uniform(60, 95, n), 1),
        "housing_units": np.round(rng.uniform(500, 3000, n)),
        "pct_no_vehicle": np.round(rng.uniform(2, 30, n), 1),
        "pct_over_65": np.round(rng.uniform(8, 25, n), 1),
        "pct_public_transit": np.round(rng.uniform(1, 15, n), 1),
        "air_quality_index": np.round(rng.uniform(30, 80, n), 1),
        "pct_internet_access": np.round(rng.uniform(55, 95, n), 1),
    }
    # poverty loosely tracks vehicle access so the two stay plausibly linked
    table["pct_poverty"] = np.round(
        np.clip(8 + 0.5 * table["pct_no_vehicle"] + rng.normal(0, 3, n), 1, 45), 1
    )
    return table


def _unit_rates(table: dict, rng: np.random.Generator) -> np.ndarray:
    """Per-unit testing propensity with the engineered sign pattern:
    education +, housing density +, limited transportation -."""
    n = GRID_COLS * GRID_ROWS
    rate = (
        1.0
        + 0.9 * _zscore(table["pct_hs_diploma"])
        + 0.8 * _zscore(table["housing_units"])
        - 0.9 * _zscore(table["pct_no_vehicle"])
        + 0.15 * rng.normal(0, 1, n)
    )
    # spatial cluster: one corner of the grid runs consistently hotter
    for idx in range(n):
        row, col = divmod(idx, GRID_COLS)
        rate[idx] *= 1.0 + 1.5 * math.exp(-((col - 7) ** 2 + (row - 2) ** 2) / 4.0)
    return np.clip(rate, 0.1, None)


def _time_profile(day: dt.date) -> float:
    """Logistic ramp-up peaking at the intervention, exponential decline after."""
    d = (day - START).days
    d_int = (INTERVENTION - START).days
    rise = 0.15 + 0.85 / (1.0 + math.exp(-(d - 60) / 9.0))
    if day < INTERVENTION:
        return rise
    peak = 0.15 + 0.85 / (1.0 + math.exp(-(d_int - 60) / 9.0))
    return peak * math.exp(-(d - d_int) / 35.0)


def _point_in_cell(idx: int, rng: np.random.Generator) -> tuple:
    lon, lat = _cell_origin(idx)
    inset = 0.1 * CELL
    return (
        rng.uniform(lon + inset, lon + CELL - inset),
        rng.uniform(lat + inset, lat + CELL - inset),
    )


def _registry_rows(table: dict, rng: np.random.Generator) -> list:
    n = GRID_COLS * GRID_ROWS
    rates = _unit_rates(table, rng)
    pop = table["population_total"]
    days = [START + dt.timedelta(days=i) for i in range((END - START).days + 1)]
    weight = pop * rates
    profile = np.array([_time_profile(d) for d in days])
    # scale so the expected number of test events is ~5000
    kappa = 5000.0 / float(weight.sum() * profile.sum())

    pos_rate = np.clip(0.15 + 0.08 * _zscore(table["pct_poverty"]), 0.05, 0.4)

    rows = []
    counter = 0

    def new_id() -> str:
        nonlocal counter
        counter += 1
        return f"E{counter:06d}"

    def demo_strata():
        age = ("0-17", "18-44", "45-64", "65+", "U")[
            rng.choice(5, p=np.array(AGE_P))
        ]
        sex = ("F", "M", "U")[rng.choice(3, p=np.array(SEX_P))]
        race = RACE_CODES[rng.choice(5, p=np.array(RACE_P))]
        return age, sex, race

    def location(idx: int) -> tuple:
        if rng.random() < 0.8:
            lon, lat = _point_in_cell(idx, rng)
            return f"{lat:.6f}", f"{lon:.6f}", ""
        return "", "", _unit_id(idx)

    for day in days:
        prof = _time_profile(day)
        lam = kappa * weight * prof
        counts = rng.poisson(lam)
        for idx in range(n):
            for _ in range(int(counts[idx])):
                age, sex, race = demo_strata()
                lat, lon, unit = location(idx)
                positive = rng.random() < pos_rate[idx]
                rows.append(
                    [
                        new_id(), day.isoformat(), "test",
                        "positive" if positive else "negative",
                        lat, lon, unit, age, sex, race,
                    ]
                )
                if positive and rng.random() < 0.12:
                    lag = int(rng.integers(2, 9))
                    hday = min(day + dt.timedelta(days=lag), END)
                    lat2, lon2, unit2 = location(idx)
                    rows.append(
                        [
                            new_id(), hday.isoformat(), "hospitalization", "",
                            lat2, lon2, unit2, age, sex, race,
                        ]
                    )
                    if rng.random() < 0.2:
                        dday = min(hday + dt.timedelta(days=int(rng.integers(3, 12))), END)
                        lat3, lon3, unit3 = location(idx)
                        rows.append(
                            [
                                new_id(), dday.isoformat(), "death", "",
                                lat3, lon3, unit3, age, sex, race,
                            ]
                        )
    return rows


_DIRTY_ROWS = [
    # both coordinates and unit_id: kept, precedence note emitted
    ["EDUAL01", "2020-04-02", "test", "negative",
     "35.027000", "-90.077000", "T000", "18-44", "F", "w"],
    # unparseable date
    ["EBAD001", "2020-13-01", "test", "positive", "", "", "T001", "18-44", "M", "b"],
    # unknown event type
    ["EBAD002", "2020-04-03", "vaccination", "", "", "", "T002", "45-64", "F", "w"],
    # test without result
    ["EBAD003", "2020-04-04", "test", "", "", "", "T003", "0-17", "M", "h"],
    # unknown age band
    ["EBAD004", "2020-04-05", "case", "", "", "", "T004", "99", "F", "w"],
    # unknown sex code
    ["EBAD005", "2020-04-06", "case", "", "", "", "T005", "18-44", "Z", "w"],
    # point far outside every unit: загружается, then lands unassigned
    ["EFAR001", "2020-04-07", "test", "negative",
     "40.000000", "-80.000000", "", "18-44", "F", "w"],
    # no location at all
    ["EBAD006", "2020-04-08", "test", "negative", "", "", "", "18-44", "F", "w"],
    # latitude without longitude
    ["EBAD007", "2020-04-09", "test", "negative",
     "35.010000", "", "", "18-44", "F", "w"],
]


def _csv_text(header: list, rows: list) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def write_demo_inputs(out_dir, seed: int = 11) -> dict:
    """Write all fixture files into out_dir; fully determined by the seed."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    table = _indicators(rng)
    registry_rows = _registry_rows(table, rng) + [list(r) for r in _DIRTY_ROWS]

    ind_rows = []
    for idx in range(GRID_COLS * GRID_ROWS):
        unit = _unit_id(idx)
        for key in ("population_total",) + INDICATOR_KEYS:
            ind_rows.append([unit, "tract", key, repr(float(table[key][idx]))])

    mob_rows = []
    week = START
    while week <= END:
        d = (week - INTERVENTION).days
        for idx in range(GRID_COLS * GRID_ROWS):
            unit = _unit_id(idx)
            pct_home = 25.0 + 20.0 / (1.0 + math.exp(-d / 5.0)) + rng.normal(0, 2.0)
            pct_home = float(np.clip(pct_home, 0.0, 100.0))
            away = float(max(30.0, 300.0 - 3.0 * (pct_home - 25.0) + rng.normal(0, 10.0)))
            mob_rows.append([unit, week.isoformat(), "pct_home", f"{pct_home:.2f}"])
            mob_rows.append([unit, week.isoformat(), "median_away_minutes", f"{away:.1f}"])
        week += dt.timedelta(weeks=1)

    paths = {
        "geo": out / "geo.geojson",
        "registry": out / "registry.csv",
        "indicators": out / "indicators.csv",
        "mobility": out / "mobility.csv",
        "whitelist": out / "whitelist.txt",
        "tokens": out / "tokens.json",
    }
    paths["geo"].write_text(json.dumps(_grid_geojson()))
    paths["registry"].write_text(_csv_text(REGISTRY_HEADER, registry_rows))
    paths["indicators"].write_text(_csv_text(INDICATORS_HEADER, ind_rows))
    paths["mobility"].write_text(_csv_text(MOBILITY_HEADER, mob_rows))
    paths["whitelist"].write_text(
        "# domain-knowledge edges considered plausible\n"
        "pct_hs_diploma tests\n"
        "housing_units tests\n"
        "pct_no_vehicle tests\n"
        "pct_poverty cases\n"
        "pct_over_65 deaths\n"
    )
    paths["tokens"].write_text(
        json.dumps(
            {
                "tok-official": "official",
                "tok-clinician": "clinician",
                "tok-public": "public",
            },
            indent=2,
        )
        + "\n"
    )
    return {k: str(v) for k, v in paths.items()}
