"""Read-only HTTP facade over a results repository.

Every analytics response embeds the stored payload bytes verbatim inside a
small envelope, so clients see exactly what the offline pipeline computed.
Access is gated per feature: officials get F1-F5, clinicians F2-F5, the
public F4-F5 (overridable via the auth config file).
"""

from __future__ import annotations

import datetime as dt
import json
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from fastapi import FastAPI, Request, Response
from fastapi.responses import JSONResponse

from . import pipeline
from .catalog import builtin_catalog, catalog_to_document
from .errors import DigestMismatch, NotFound
from .geo import Level
from .ingest import Calendar, Outcome
from .repo import Analytic, Repo, ResultKey, canonical_json

FEATURES = ("F1", "F2", "F3", "F4", "F5")

DEFAULT_ROLE_FEATURES = {
    "official": frozenset(FEATURES),
    "clinician": frozenset({"F2", "F3", "F4", "F5"}),
    "public": frozenset({"F4", "F5"}),
}

FEATURE_BY_ANALYTIC = {
    Analytic.CAUSAL_STRUCTURE: "F1",
    Analytic.REGRESSION: "F2",
    Analytic.IMPACT: "F3",
    Analytic.HOTSPOTS: "F4",
    Analytic.DISTRIBUTION: "F5",
}

_LEVELS = [lv.value for lv in Level]
_OUTCOMES = [o.value for o in Outcome]


@dataclass(frozen=True)
class Role:
    name: str
    allowed_features: frozenset


def load_auth_config(path) -> tuple:
    """Auth file: either {token: role} or
    {"tokens": {token: role}, "features": {role: [feature, ...]}}."""
    doc = json.loads(Path(path).read_text())
    if "tokens" in doc:
        tokens = dict(doc["tokens"])
        features = {
            role: frozenset(feats)
            for role, feats in doc.get("features", {}).items()
        }
    else:
        tokens = dict(doc)
        features = {}
    roles = dict(DEFAULT_ROLE_FEATURES)
    roles.update(features)
    for token, role in tokens.items():
        if role not in roles:
            raise ValueError(f"token {token!r} maps to unknown role {role!r}")
    return tokens, roles


def _error(status: int, code: str, message: str) -> JSONResponse:
    return JSONResponse(status_code=status, content={"code": code, "message": message})


def create_app(
    repo_root,
    tokens: dict,
    role_features: Optional[dict] = None,
    static_dir=None,
) -> FastAPI:
    repo = Repo(repo_root)
    roles = {
        name: Role(name=name, allowed_features=frozenset(feats))
        for name, feats in (role_features or DEFAULT_ROLE_FEATURES).items()
    }
    token_map = dict(tokens)

    app = FastAPI(title="upho service", docs_url=None, redoc_url=None)

    @app.middleware("http")
    async def request_log(request: Request, call_next):
        start = time.perf_counter()
        response = await call_next(request)
        ms = (time.perf_counter() - start) * 1000.0
        print(f"{request.method} {request.url.path} {response.status_code} {ms:.1f}ms")
        return response

    def authenticate(request: Request):
        header = request.headers.get("authorization", "")
        if not header.startswith("Bearer "):
            return None, _error(401, "unauthorized", "missing bearer token")
        token = header[len("Bearer "):].strip()
        role_name = token_map.get(token)
        if role_name is None:
            return None, _error(401, "unauthorized", "unknown token")
        return roles[role_name], None

    def common_params(params) -> tuple:
        disease = params.get("disease", "")
        if not disease:
            return None, _error(400, "bad_request", "missing required param 'disease'")
        outcome = params.get("outcome", "")
        if outcome not in _OUTCOMES:
            return None, _error(
                400, "bad_request",
                f"outcome must be one of {', '.join(_OUTCOMES)}",
            )
        level = params.get("level", "")
        if level not in _LEVELS:
            return None, _error(
                400, "bad_request",
                f"level must be one of {', '.join(_LEVELS)}",
            )
        return (disease, Outcome(outcome), Level(level)), None

    def respond_with_result(key: ResultKey) -> Response:
        try:
            payload = repo.read_result_bytes(key)
        except NotFound:
            return _error(
                404, "not_computed",
                "result not precomputed; run `upho analyze --repo ... "
                f"--disease {key.disease} --outcomes {key.outcome.value} "
                f"--levels {key.level.value} --analytics {key.analytic.value}`",
            )
        except DigestMismatch as exc:
            return _error(500, "corrupt_result", str(exc))
        envelope = canonical_json(
            {
                "generated_at": dt.datetime.now(dt.timezone.utc).strftime(
                    "%Y-%m-%dT%H:%M:%SZ"
                ),
                "key": key.to_document(),
            }
        )
        # splice stored bytes verbatim: payload fidelity is byte-exact
        body = envelope[:-1].encode() + b',"payload":' + payload + b"}"
        return Response(content=body, media_type="application/json")

    def analytics_route(request: Request, analytic: Analytic, params_fn):
        role, err = authenticate(request)
        if err is not None:
            return err
        feature = FEATURE_BY_ANALYTIC[analytic]
        if feature not in role.allowed_features:
            return _error(
                403, "forbidden",
                f"role {role.name!r} may not access feature {feature}",
            )
        common, err = common_params(request.query_params)
        if err is not None:
            return err
        disease, outcome, level = common
        params, err = params_fn(request.query_params)
        if err is not None:
            return err
        key = ResultKey.make(disease, outcome, analytic, level, params)
        return respond_with_result(key)

    # --- metadata ---

    def meta_route(request: Request, payload) -> Response:
        _, err = authenticate(request)
        if err is not None:
            return err
        return JSONResponse(content=payload)

    @app.get("/meta/levels")
    def meta_levels(request: Request):
        return meta_route(request, _LEVELS)

    @app.get("/meta/outcomes")
    def meta_outcomes(request: Request):
        return meta_route(request, _OUTCOMES)

    @app.get("/meta/catalog")
    def meta_catalog(request: Request):
        try:
            doc = repo.read_table("catalog")
        except NotFound:
            doc = catalog_to_document(builtin_catalog())
        return meta_route(request, doc)

    # --- analytics ---

    @app.get("/analytics/causal-structure")
    def analytics_causal(request: Request):
        return analytics_route(
            request,
            Analytic.CAUSAL_STRUCTURE,
            lambda q: (pipeline.causal_structure_params(), None),
        )

    @app.get("/analytics/regression")
    def analytics_regression(request: Request):
        def params_fn(q):
            model = q.get("model", "ols")
            if model not in ("ols", "gwr"):
                return None, _error(400, "bad_request", "model must be ols or gwr")
            return pipeline.regression_params(model), None

        return analytics_route(request, Analytic.REGRESSION, params_fn)

    @app.get("/analytics/impact")
    def analytics_impact(request: Request):
        def params_fn(q):
            intervention = q.get("intervention", "")
            try:
                dt.date.fromisoformat(intervention)
            except ValueError:
                return None, _error(
                    400, "bad_request", "intervention must be YYYY-MM-DD"
                )
            period = q.get("period", Calendar.DAILY.value)
            if period not in (c.value for c in Calendar):
                return None, _error(400, "bad_request", "period must be daily or weekly")
            stratify = q.get("stratify", "none")
            if stratify not in ("none", "age", "sex", "race"):
                return None, _error(
                    400, "bad_request", "stratify must be none, age, sex, or race"
                )
            return pipeline.impact_params(intervention, period, stratify), None

        return analytics_route(request, Analytic.IMPACT, params_fn)

    @app.get("/analytics/hotspots")
    def analytics_hotspots(request: Request):
        def params_fn(q):
            mode = q.get("mode", "snapshot")
            if mode not in ("snapshot", "emerging"):
                return None, _error(
                    400, "bad_request", "mode must be snapshot or emerging"
                )
            return pipeline.hotspot_params(mode), None

        return analytics_route(request, Analytic.HOTSPOTS, params_fn)

    @app.get("/analytics/distribution")
    def analytics_distribution(request: Request):
        def params_fn(q):
            raw = q.get("indicators", "")
            keys = [k for k in raw.split(",") if k != ""]
            try:
                doc = repo.read_table("catalog")
                known = {row["key"] for row in doc["indicators"]}
            except NotFound:
                known = {d.key for d in builtin_catalog()}
            unknown = [k for k in keys if k not in known]
            if unknown:
                return None, _error(
                    400, "bad_request", f"unknown indicator(s): {', '.join(unknown)}"
                )
            return pipeline.distribution_params(keys), None

        return analytics_route(request, Analytic.DISTRIBUTION, params_fn)

    # --- geometries for map rendering ---

    @app.get("/geo/{level}.geojson")
    def geo_level(request: Request, level: str):
        _, err = authenticate(request)
        if err is not None:
            return err
        if level not in _LEVELS:
            return _error(400, "bad_request", f"level must be one of {', '.join(_LEVELS)}")
        try:
            doc = repo.read_geo(Level(level))
        except NotFound as exc:
            return _error(404, "not_found", str(exc))
        return JSONResponse(content=doc)

    if static_dir is not None and Path(static_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/app", StaticFiles(directory=str(static_dir), html=True))

    return app
