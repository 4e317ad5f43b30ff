"""Offline pipeline: ingest inputs into a repository, then compute and
persist every requested analytic so the service can run read-only.

Payload documents built here are the canonical serialization contract; the
service returns their stored bytes verbatim.
"""

from __future__ import annotations

import datetime as dt
import json
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import catalog as catmod
from . import causal as causalmod
from . import geo as geomod
from . import hotspot as hotmod
from . import ingest as ingmod
from . import regression as regmod
from .errors import UphoError
from .geo import FixedBand, Level
from .ingest import Calendar, EventRecord, EventType, Outcome, TestResult
from .repo import Analytic, Repo, ResultKey

ALL_ANALYTICS = tuple(Analytic)


class PipelineFailure(UphoError):
    """An analytic failed for one (analytic, outcome, level) combination."""

    def __init__(self, analytic, outcome, level, cause):
        self.analytic = analytic
        self.outcome = outcome
        self.level = level
        self.cause = cause
        super().__init__(
            f"{analytic.value} failed for outcome={outcome.value} "
            f"level={level.value}: {cause}"
        )


# --- parameter dictionaries (shared verbatim by pipeline and service) ---


def causal_structure_params() -> dict:
    return {}


def regression_params(model: str) -> dict:
    return {"model": model}


def impact_params(intervention: str, period: str, stratify: str) -> dict:
    return {"intervention": intervention, "period": period, "stratify": stratify}


def hotspot_params(mode: str) -> dict:
    return {"mode": mode}


def distribution_params(indicators) -> dict:
    return {"indicators": sorted(indicators)}


# --- ingest ---


@dataclass
class IngestSummary:
    registry_rows: int
    records: int
    rejects: int
    notes: int
    levels: dict = field(default_factory=dict)  # level -> {assigned, unassigned}


def _event_row(ev: EventRecord) -> list:
    return [
        ev.event_id, ev.date.isoformat(), ev.event_type.value,
        ev.result.value, ev.unit_id, ev.age_band, ev.sex, ev.race,
    ]


def _event_from_row(row: list) -> EventRecord:
    return EventRecord(
        event_id=row[0],
        date=dt.date.fromisoformat(row[1]),
        event_type=EventType(row[2]),
        result=TestResult(row[3]),
        point=None,
        unit_id=row[4],
        age_band=row[5],
        sex=row[6],
        race=row[7],
    )


def run_ingest(
    geo_path: str,
    registry_path: str,
    indicators_path: str,
    out_root: str,
    mobility_path: Optional[str] = None,
    catalog_path: Optional[str] = None,
    *,
    reproducible: bool = False,
) -> IngestSummary:
    """Load inputs, join events to units, persist geometries and tables."""
    with open(geo_path, encoding="utf-8") as fh:
        units = geomod.load_geojson(fh.read())
    by_level: dict = {}
    for u in units:
        by_level.setdefault(u.level, []).append(u)

    if catalog_path is not None:
        with open(catalog_path, encoding="utf-8") as fh:
            cat = catmod.load_catalog_csv(fh.read())
    else:
        cat = catmod.builtin_catalog()

    with open(registry_path, encoding="utf-8") as fh:
        load = ingmod.load_registry(fh.read())

    with open(indicators_path, encoding="utf-8") as fh:
        ind_tables = ingmod.load_indicators_csv(fh.read(), cat)
    for level, table in ind_tables.items():
        if level in by_level:
            known = {u.unit_id for u in by_level[level]}
            for unit_id in table.unit_ids():
                if unit_id not in known:
                    raise UphoError(
                        f"indicators reference unknown unit {unit_id!r} "
                        f"at level {level.value}"
                    )

    mobility = None
    if mobility_path is not None:
        with open(mobility_path, encoding="utf-8") as fh:
            mobility = ingmod.load_mobility_csv(fh.read())

    repo = Repo.initialize(out_root, reproducible=reproducible)
    summary = IngestSummary(
        registry_rows=len(load.records) + len(load.rejects),
        records=len(load.records),
        rejects=len(load.rejects),
        notes=len(load.notes),
    )

    for level, lvl_units in sorted(by_level.items(), key=lambda kv: kv[0].value):
        join = ingmod.spatial_join(load.records, lvl_units)
        summary.levels[level.value] = {
            "assigned": len(join.assigned),
            "unassigned": len(join.unassigned),
        }
        repo.write_geo(level, geomod.units_to_geojson(lvl_units))
        dates = [ev.date for ev in join.assigned]
        repo.write_table(
            f"events_{level.value}",
            {
                "level": level.value,
                "unit_ids": sorted(u.unit_id for u in lvl_units),
                "window": (
                    [min(dates).isoformat(), max(dates).isoformat()] if dates else None
                ),
                "events": [_event_row(ev) for ev in join.assigned],
            },
        )

    for level, table in sorted(ind_tables.items(), key=lambda kv: kv[0].value):
        rows = sorted(
            [[u, k, v] for (u, k), v in table.values.items()],
            key=lambda r: (r[0], r[1]),
        )
        repo.write_table(f"indicators_{level.value}", {"level": level.value, "values": rows})

    if mobility is not None:
        rows = sorted(
            [[u, d.isoformat(), k, v] for (u, d, k), v in mobility.metrics.items()],
            key=lambda r: (r[0], r[1], r[2]),
        )
        repo.write_table("mobility", {"metrics": rows})

    repo.write_table("catalog", catmod.catalog_to_document(cat))
    repo.write_table(
        "meta",
        {
            "levels": sorted(lv.value for lv in by_level),
            "counts": {
                "registry_rows": summary.registry_rows,
                "records": summary.records,
                "rejects": summary.rejects,
                "by_level": summary.levels,
            },
            "rejects": [[r.line, r.reason] for r in load.rejects],
            "notes": list(load.notes),
        },
    )
    return summary


# --- analyze ---


@dataclass
class AnalyzeConfig:
    disease: str
    outcomes: tuple
    levels: tuple
    analytics: tuple
    intervention: Optional[dt.date] = None
    seed: int = 0
    tau: float = 0.3
    alpha: float = 0.05
    whitelist: frozenset = frozenset()
    kernel: str = "bisquare"
    adaptive: bool = True
    bandwidth: Optional[float] = None  # None = select by corrected AIC
    impute: ingmod.Impute = ingmod.Impute.DROP
    reproducible: bool = False


@dataclass
class _LevelData:
    level: Level
    unit_ids: tuple
    centroids: list
    events: list
    window: tuple
    indicators: ingmod.IndicatorTable
    daily: dict  # Outcome -> OutcomeSeries
    weekly: dict


def _load_level(repo: Repo, level: Level, cat) -> _LevelData:
    events_doc = repo.read_table(f"events_{level.value}")
    ind_doc = repo.read_table(f"indicators_{level.value}")
    geo_doc = repo.read_geo(level)
    units = geomod.load_geojson(json.dumps(geo_doc))
    units.sort(key=lambda u: u.unit_id)
    events = [_event_from_row(r) for r in events_doc["events"]]
    if events_doc["window"] is None:
        raise UphoError(f"no assigned events at level {level.value}")
    window = (
        dt.date.fromisoformat(events_doc["window"][0]),
        dt.date.fromisoformat(events_doc["window"][1]),
    )
    unit_ids = tuple(sorted(events_doc["unit_ids"]))
    table = ingmod.IndicatorTable(
        level=level,
        values={(u, k): float(v) for u, k, v in ind_doc["values"]},
    )
    return _LevelData(
        level=level,
        unit_ids=unit_ids,
        centroids=[u.centroid for u in units],
        events=events,
        window=window,
        indicators=table,
        daily=ingmod.aggregate_events(events, level, Calendar.DAILY, unit_ids),
        weekly=ingmod.aggregate_events(events, level, Calendar.WEEKLY, unit_ids),
    )


def _windowed_counts(series: ingmod.OutcomeSeries, window, stratum=ingmod.ALL_STRATUM):
    totals = {u: 0.0 for u in series.unit_ids}
    for (unit_id, date, s), count in series.cells.items():
        if s == stratum and window[0] <= date <= window[1]:
            totals[unit_id] += count
    return np.array([totals[u] for u in series.unit_ids])


def _time_series(series: ingmod.OutcomeSeries, window, stratum=ingmod.ALL_STRATUM):
    """(dates, totals) over the window, zero-filled, all units summed."""
    if series.calendar is Calendar.DAILY:
        start, end = window
        dates = [start + dt.timedelta(days=i) for i in range((end - start).days + 1)]
        pos = {d: i for i, d in enumerate(dates)}
    else:
        start = ingmod.week_start(window[0])
        end = ingmod.week_start(window[1])
        dates = [start + dt.timedelta(weeks=i) for i in range(((end - start).days // 7) + 1)]
        pos = {d: i for i, d in enumerate(dates)}
    values = np.zeros(len(dates))
    for (unit_id, date, s), count in series.cells.items():
        if s == stratum and date in pos:
            values[pos[date]] += count
    return dates, values


def _frame(data: _LevelData, outcome: Outcome):
    keys = [k for k in data.indicators.keys() if k != "population_total"]
    return ingmod.consolidate(
        data.daily[outcome],
        data.indicators,
        predictors=sorted(keys),
        window=data.window,
        per_capita=True,
    )


def _gstar_weights(data: _LevelData):
    # shared default: smallest all-connecting band, binary, self-inclusive
    units_sorted_ids = list(data.unit_ids)
    dist = geomod.pairwise_km(data.centroids)
    np.fill_diagonal(dist, np.inf)
    d_km = float(dist.min(axis=1).max())
    entries = {}
    n = len(units_sorted_ids)
    for i in range(n):
        entries[(i, i)] = 1.0
        for j in range(n):
            if i != j and dist[i, j] <= d_km:
                entries[(i, j)] = 1.0
    return (
        geomod.SpatialWeights(
            n=n, scheme=FixedBand(d_km), entries=entries, includes_self=True
        ),
        d_km,
    )


def _payload_common(cfg: AnalyzeConfig, outcome: Outcome, data: _LevelData) -> dict:
    return {
        "disease": cfg.disease,
        "outcome": outcome.value,
        "level": data.level.value,
        "window": [data.window[0].isoformat(), data.window[1].isoformat()],
    }


def _regression_payloads(cfg, outcome, data):
    frame = _frame(data, outcome)
    ols = regmod.fit_ols(frame)
    keys = list(frame.predictor_keys)
    named = lambda vec: {
        "intercept": float(vec[0]),
        **{k: float(vec[j + 1]) for j, k in enumerate(keys)},
    }
    ols_payload = {
        **_payload_common(cfg, outcome, data),
        "model": "ols",
        "n": frame.n,
        "predictors": keys,
        "beta": named(ols.beta),
        "std_err": named(ols.std_err),
        "t_stats": named(ols.t_stats),
        "r2": ols.r2,
        "adj_r2": ols.adj_r2,
        "aicc": ols.aicc,
        "vif": {k: float(ols.vif[j]) for j, k in enumerate(keys)},
        "warnings": list(ols.warnings),
    }
    if cfg.bandwidth is not None:
        bandwidth = cfg.bandwidth
    else:
        bandwidth = regmod.select_bandwidth(
            frame, data.centroids, cfg.kernel, cfg.adaptive
        )
    gwr = regmod.fit_gwr(frame, data.centroids, cfg.kernel, bandwidth, cfg.adaptive)
    comparison = regmod.compare_models(ols, gwr)
    local = {}
    for i, u in enumerate(frame.unit_ids):
        local[u] = {
            "coefficients": named(gwr.local_beta[i]),
            "r2": float(gwr.local_r2[i]),
            "residual": float(gwr.local_residuals[i]),
        }
    gwr_payload = {
        **_payload_common(cfg, outcome, data),
        "model": "gwr",
        "n": frame.n,
        "predictors": keys,
        "kernel": gwr.kernel.value,
        "bandwidth": gwr.bandwidth,
        "adaptive": gwr.adaptive,
        "aicc": gwr.aicc,
        "effective_params": gwr.effective_params,
        "local": local,
        "comparison": {
            "ols_aicc": comparison.ols_aicc,
            "gwr_aicc": comparison.gwr_aicc,
            "preferred": comparison.preferred.value,
            "delta": comparison.delta,
        },
    }
    return ols_payload, gwr_payload


def _hotspot_payloads(cfg, outcome, data):
    weights, d_km = _gstar_weights(data)
    values = _windowed_counts(data.daily[outcome], data.window)
    g = hotmod.getis_ord_gstar(values, weights)
    result = hotmod.classify_hotspots(
        g.z, g.p, fdr=True, unit_ids=data.unit_ids, zero_variance=g.zero_variance
    )
    snapshot = {
        **_payload_common(cfg, outcome, data),
        "mode": "snapshot",
        "weights": {"scheme": "fixed_band", "d_km": d_km, "self_weight": 1.0},
        "fdr": True,
        "zero_variance": result.zero_variance,
        "unit_ids": list(result.unit_ids),
        "value": {u: float(values[i]) for i, u in enumerate(result.unit_ids)},
        "z": {u: float(result.z[i]) for i, u in enumerate(result.unit_ids)},
        "p": {u: float(result.p[i]) for i, u in enumerate(result.unit_ids)},
        "p_adj": {u: float(result.p_adj[i]) for i, u in enumerate(result.unit_ids)},
        "klass": {u: result.klass[i].value for i, u in enumerate(result.unit_ids)},
    }
    cube = hotmod.build_cube(data.weekly[outcome], Calendar.WEEKLY)
    emerging = hotmod.emerging_hotspot(cube, weights)
    emerging_payload = {
        **_payload_common(cfg, outcome, data),
        "mode": "emerging",
        "weights": {"scheme": "fixed_band", "d_km": d_km, "self_weight": 1.0},
        "bins": [b.isoformat() for b in emerging.bins],
        "unit_ids": list(emerging.unit_ids),
        "pattern": {u: emerging.pattern[i].value for i, u in enumerate(emerging.unit_ids)},
        "mk_z": {u: float(emerging.mk_z[i]) for i, u in enumerate(emerging.unit_ids)},
        "hot_bin_count": {
            u: int(emerging.hot_bin_count[i]) for i, u in enumerate(emerging.unit_ids)
        },
        "z_by_bin": {
            u: [float(v) for v in emerging.z_by_bin[i]]
            for i, u in enumerate(emerging.unit_ids)
        },
    }
    return snapshot, emerging_payload


def _hill_doc(h) -> dict:
    return {
        "strength": h.strength,
        "consistency": h.consistency,
        "temporality": h.temporality,
        "gradient": h.gradient,
        "plausibility": h.plausibility,
        "total": h.total,
    }


def _causal_payload(cfg, outcome, data, cat):
    frame = _frame(data, outcome)
    config = causalmod.CausalConfig(
        tau=cfg.tau, alpha=cfg.alpha, whitelist=cfg.whitelist, seed=cfg.seed
    )
    structure = causalmod.build_causal_structure(
        frame, outcome.value, cat, domains=None, config=config
    )
    return {
        **_payload_common(cfg, outcome, data),
        "tau": structure.tau,
        "alpha": structure.alpha,
        "nodes": list(structure.nodes),
        "edges": [
            {
                "from": e.src,
                "to": e.dst,
                "directed": e.directed,
                "rho": e.rho,
                "p_adj": e.p_adj,
                "sign": e.sign,
                "hill": _hill_doc(e.hill) if e.hill is not None else None,
            }
            for e in structure.edges
        ],
    }


_STRATA_DIMENSIONS = {
    "age": ("age", list(ingmod.AGE_BANDS)),
    "sex": ("sex", list(ingmod.SEXES)),
}


def _impact_series_doc(result) -> dict:
    return {
        "dates": [d.isoformat() for d in result.dates],
        "observed": [float(v) for v in result.observed],
        "cf_mean": [float(v) for v in result.cf_mean],
        "cf_lower": [float(v) for v in result.cf_lower],
        "cf_upper": [float(v) for v in result.cf_upper],
        "post_start": result.post_start,
        "cumulative_effect": list(result.cumulative_effect),
        "relative_effect_pct": list(result.relative_effect_pct),
        "tail_prob": result.tail_prob,
    }


def _impact_payloads(cfg, outcome, data):
    payloads = {}
    for period in (Calendar.DAILY, Calendar.WEEKLY):
        series = data.daily[outcome] if period is Calendar.DAILY else data.weekly[outcome]
        strata_specs = [("none", [None])]
        race_codes = sorted(
            {s.split(":", 1)[1] for (_u, _d, s) in series.cells if s.startswith("race:")}
        )
        strata_specs.append(("age", list(ingmod.AGE_BANDS)))
        strata_specs.append(("sex", list(ingmod.SEXES)))
        strata_specs.append(("race", race_codes))
        for stratify, bands in strata_specs:
            doc = {
                **_payload_common(cfg, outcome, data),
                "intervention": cfg.intervention.isoformat(),
                "period": period.value,
                "stratify": stratify,
            }
            if stratify == "none":
                dates, values = _time_series(series, data.window)
                result = causalmod.causal_impact(
                    dates, values, cfg.intervention, seed=cfg.seed
                )
                doc["series"] = _impact_series_doc(result)
            else:
                strata_docs = {}
                for band in bands:
                    dates, values = _time_series(
                        series, data.window, stratum=f"{stratify}:{band}"
                    )
                    result = causalmod.causal_impact(
                        dates, values, cfg.intervention, seed=cfg.seed
                    )
                    strata_docs[band] = _impact_series_doc(result)
                doc["strata"] = strata_docs
            payloads[(period.value, stratify)] = doc
    return payloads


def _distribution_payloads(cfg, outcome, data):
    values = _windowed_counts(data.daily[outcome], data.window)
    base = {
        **_payload_common(cfg, outcome, data),
        "unit_ids": list(data.unit_ids),
        "outcome_values": {
            u: float(values[i]) for i, u in enumerate(data.unit_ids)
        },
    }
    payloads = {(): {**base, "indicators": [], "indicator_values": {}}}
    for key in data.indicators.keys():
        vals = {
            u: data.indicators.values[(u, key)]
            for u in data.unit_ids
            if (u, key) in data.indicators.values
        }
        payloads[(key,)] = {
            **base,
            "indicators": [key],
            "indicator_values": {key: vals},
        }
    return payloads


@dataclass
class AnalyzeSummary:
    written: int = 0
    combos: list = field(default_factory=list)


def run_analyze(repo_root: str, cfg: AnalyzeConfig) -> AnalyzeSummary:
    """Compute every requested analytic for each (outcome, level) pair and
    persist canonical payloads; re-running with identical inputs is
    idempotent (same hashes, same bytes)."""
    repo = Repo(repo_root)
    if not repo.exists():
        raise UphoError(f"no repository at {repo_root}; run the ingest command first")
    cat = catmod.catalog_from_document(repo.read_table("catalog"))
    if cfg.reproducible:
        manifest = repo.load_manifest()
        if manifest.get("created") != "1970-01-01T00:00:00Z":
            manifest["created"] = "1970-01-01T00:00:00Z"
            repo._save_manifest(manifest)

    summary = AnalyzeSummary()

    def publish(outcome, level, analytic, params, payload):
        key = ResultKey.make(cfg.disease, outcome, analytic, level, params)
        repo.write_result(key, payload)
        summary.written += 1

    for level in cfg.levels:
        level = Level(level)
        data = _load_level(repo, level, cat)
        for outcome in cfg.outcomes:
            outcome = Outcome(outcome)
            for analytic in cfg.analytics:
                analytic = Analytic(analytic)
                try:
                    if analytic is Analytic.REGRESSION:
                        ols_doc, gwr_doc = _regression_payloads(cfg, outcome, data)
                        publish(outcome, level, analytic,
                                regression_params("ols"), ols_doc)
                        publish(outcome, level, analytic,
                                regression_params("gwr"), gwr_doc)
                    elif analytic is Analytic.HOTSPOTS:
                        snap, emer = _hotspot_payloads(cfg, outcome, data)
                        publish(outcome, level, analytic,
                                hotspot_params("snapshot"), snap)
                        publish(outcome, level, analytic,
                                hotspot_params("emerging"), emer)
                    elif analytic is Analytic.CAUSAL_STRUCTURE:
                        doc = _causal_payload(cfg, outcome, data, cat)
                        publish(outcome, level, analytic,
                                causal_structure_params(), doc)
                    elif analytic is Analytic.IMPACT:
                        if cfg.intervention is None:
                            raise UphoError(
                                "impact analytics require an intervention date"
                            )
                        for (period, stratify), doc in _impact_payloads(
                            cfg, outcome, data
                        ).items():
                            publish(
                                outcome, level, analytic,
                                impact_params(
                                    cfg.intervention.isoformat(), period, stratify
                                ),
                                doc,
                            )
                    elif analytic is Analytic.DISTRIBUTION:
                        for keys, doc in _distribution_payloads(
                            cfg, outcome, data
                        ).items():
                            publish(
                                outcome, level, analytic,
                                distribution_params(list(keys)), doc,
                            )
                except PipelineFailure:
                    raise
                except Exception as exc:
                    raise PipelineFailure(analytic, outcome, level, exc) from exc
                summary.combos.append((analytic.value, outcome.value, level.value))
    return summary
