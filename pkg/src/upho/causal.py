"""Association screening and intervention evaluation.

Covers rank correlation with tie handling, five-criterion evidence scoring,
the thresholded indicator/outcome association graph, and a counterfactual
intervention estimate from a local-level Gaussian state-space model fitted
by maximum likelihood on a deterministic variance grid.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import special

from .catalog import Catalog, DomainCode, SdohDomain
from .errors import (
    InsufficientPrePeriod,
    InterventionOutOfRange,
    LengthMismatch,
    NoIndicatorsSelected,
    PrePeriodTooShort,
    ZeroVariance,
)

# --- rank correlation ---


def _midranks(x: np.ndarray) -> np.ndarray:
    """Average ranks (1-based); ties share the mean of their rank span."""
    order = np.argsort(x, kind="stable")
    ranks = np.empty(x.shape[0])
    i = 0
    while i < x.shape[0]:
        j = i
        while j + 1 < x.shape[0] and x[order[j + 1]] == x[order[i]]:
            j += 1
        ranks[order[i : j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def spearman(x, y) -> tuple:
    """Rank correlation with mid-ranks for ties; two-sided p from the
    t-approximation t = rho sqrt((n-2)/(1-rho^2)).  |rho| = 1 gives p = 0."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise LengthMismatch(f"shapes {x.shape} and {y.shape} differ")
    n = x.shape[0]
    if n < 3:
        raise LengthMismatch(f"need n >= 3, have {n}")
    rx = _midranks(x)
    ry = _midranks(y)
    sx = rx.std(ddof=0)
    sy = ry.std(ddof=0)
    if sx == 0.0 or sy == 0.0:
        raise ZeroVariance("rank correlation undefined for an all-tied vector")
    rho = float(((rx - rx.mean()) * (ry - ry.mean())).mean() / (sx * sy))
    rho = max(-1.0, min(1.0, rho))
    if abs(rho) == 1.0:
        return rho, 0.0
    t = rho * math.sqrt((n - 2) / (1.0 - rho * rho))
    p = 2.0 * float(special.stdtr(n - 2, -abs(t)))
    return rho, p


# --- evidence scoring ---


@dataclass(frozen=True)
class HillScore:
    strength: float
    consistency: float
    temporality: float
    gradient: float
    plausibility: float
    total: float


DEFAULT_HILL_WEIGHTS = {
    "strength": 1.0,
    "consistency": 1.0,
    "temporality": 1.0,
    "gradient": 1.0,
    "plausibility": 1.0,
}


@dataclass
class HillConfig:
    whitelisted: bool = False
    proxy: Optional[np.ndarray] = None  # time-varying stand-in for the indicator
    outcome_series: Optional[np.ndarray] = None  # aggregate outcome over time
    seed: int = 0
    n_subsamples: int = 20
    subsample_frac: float = 0.8
    weights: dict = field(default_factory=lambda: dict(DEFAULT_HILL_WEIGHTS))


def _consistency(x: np.ndarray, y: np.ndarray, sign: float, cfg: HillConfig) -> float:
    rng = np.random.default_rng(cfg.seed)
    n = x.shape[0]
    m = max(3, int(round(cfg.subsample_frac * n)))
    hits = 0
    for _ in range(cfg.n_subsamples):
        idx = rng.choice(n, size=m, replace=False)
        try:
            rho_s, _ = spearman(x[idx], y[idx])
        except ZeroVariance:
            continue
        if math.copysign(1.0, rho_s) == sign and rho_s != 0.0:
            hits += 1
    frac = hits / cfg.n_subsamples
    return max(0.0, min(1.0, (frac - 0.5) / 0.5))


def _temporality(proxy: Optional[np.ndarray], outcome: Optional[np.ndarray]) -> float:
    if proxy is None or outcome is None:
        return 0.5  # static indicator: temporal ordering not observable
    a = np.asarray(proxy, dtype=float)
    b = np.asarray(outcome, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise LengthMismatch("proxy and outcome series lengths differ")
    t = a.shape[0]
    max_lag = min(t - 3, max(1, t // 3))
    if max_lag < 1:
        return 0.5

    def corr(u, v):
        if u.std() == 0.0 or v.std() == 0.0:
            return 0.0
        return float(np.corrcoef(u, v)[0, 1])

    best_lag, best_mag = 0, -1.0
    for lag in range(-max_lag, max_lag + 1):
        if lag > 0:  # proxy leads the outcome by `lag` bins
            c = corr(a[:-lag], b[lag:])
        elif lag < 0:
            c = corr(a[-lag:], b[:lag])
        else:
            c = corr(a, b)
        if abs(c) > best_mag:
            best_mag, best_lag = abs(c), lag
    return 1.0 if best_lag >= 1 else 0.0


def _gradient(x: np.ndarray, y: np.ndarray) -> float:
    qs = np.quantile(x, [0.25, 0.5, 0.75])
    idx = np.searchsorted(qs, x, side="right") + 1  # quartile index 1..4
    levels = [q for q in (1, 2, 3, 4) if np.any(idx == q)]
    if len(levels) < 3:
        return 0.0
    means = [float(y[idx == q].mean()) for q in levels]
    try:
        rho, _ = spearman(np.array(levels, dtype=float), np.array(means))
    except ZeroVariance:
        return 0.0
    return abs(rho)


def hill_score(x, y, config: Optional[HillConfig] = None) -> HillScore:
    """Score an indicator->outcome association on five computable criteria.

    strength = |rho|; consistency = sign stability over seeded unit
    subsamples rescaled from [0.5, 1] to [0, 1]; temporality = 1 when the
    indicator's time-varying proxy leads the outcome series by >= 1 bin,
    0 when it lags or is simultaneous, 0.5 for static indicators;
    gradient = |rank correlation| of quartile index vs mean outcome;
    plausibility = domain-knowledge whitelist membership.
    """
    cfg = config if config is not None else HillConfig()
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    rho, _ = spearman(x, y)
    sign = math.copysign(1.0, rho) if rho != 0.0 else 0.0
    strength = abs(rho)
    consistency = _consistency(x, y, sign, cfg) if sign != 0.0 else 0.0
    temporality = _temporality(cfg.proxy, cfg.outcome_series)
    gradient = _gradient(x, y)
    plausibility = 1.0 if cfg.whitelisted else 0.0
    parts = {
        "strength": strength,
        "consistency": consistency,
        "temporality": temporality,
        "gradient": gradient,
        "plausibility": plausibility,
    }
    w = {**DEFAULT_HILL_WEIGHTS, **(cfg.weights or {})}
    wsum = sum(w[c] for c in parts)
    total = sum(w[c] * v for c, v in parts.items()) / wsum if wsum > 0 else 0.0
    return HillScore(total=total, **parts)


# --- association structure ---


@dataclass(frozen=True)
class CausalEdge:
    src: str
    dst: str
    directed: bool
    rho: float
    p_adj: float
    sign: str  # "positive" | "negative"
    hill: Optional[HillScore] = None


@dataclass(frozen=True)
class CausalStructure:
    nodes: tuple
    edges: tuple
    tau: float
    alpha: float


@dataclass
class CausalConfig:
    tau: float = 0.3
    alpha: float = 0.05
    whitelist: frozenset = frozenset()  # (indicator_key, outcome_name) pairs
    seed: int = 0
    hill_weights: Optional[dict] = None
    proxies: dict = field(default_factory=dict)  # indicator_key -> time series
    outcome_series: Optional[np.ndarray] = None


def load_whitelist(text: str) -> frozenset:
    """Parse `indicator_key outcome_name` lines; '#' starts a comment."""
    pairs = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 2:
            raise ValueError(f"whitelist line {lineno}: expected two fields")
        pairs.add((parts[0], parts[1]))
    return frozenset(pairs)


def _bh_adjust(p: np.ndarray) -> np.ndarray:
    from .hotspot import benjamini_hochberg

    return benjamini_hochberg(p)


def build_causal_structure(
    frame,
    outcome_name: str,
    catalog: Catalog,
    domains=None,
    config: Optional[CausalConfig] = None,
) -> CausalStructure:
    """Thresholded association graph around one outcome.

    Directed indicator->outcome edges are screened first (rank correlation
    across units, step-up FDR over that family); undirected edges among the
    retained indicators form a second family adjusted separately.  An edge
    survives when |rho| >= tau and adjusted p < alpha.  Constant columns
    contribute no edge rather than aborting the build.
    """
    cfg = config if config is not None else CausalConfig()
    if domains is None:
        codes = set(DomainCode)
    else:
        codes = {d.code if isinstance(d, SdohDomain) else DomainCode(d) for d in domains}
    keys = list(frame.predictor_keys)
    cols = {k: np.asarray(frame.X, dtype=float)[:, j] for j, k in enumerate(keys)}
    candidates = sorted(
        k for k in keys
        if any(dom.code in codes for dom in catalog.get(k).domains)
    )
    if not candidates:
        raise NoIndicatorsSelected(
            "no frame predictors fall in the selected domains"
        )
    y = np.asarray(frame.y, dtype=float)

    stats = {}
    for k in candidates:
        try:
            stats[k] = spearman(cols[k], y)
        except ZeroVariance:
            stats[k] = (0.0, 1.0)
    p_adj = _bh_adjust(np.array([stats[k][1] for k in candidates]))

    edges = []
    retained = []
    for k, padj in zip(candidates, p_adj):
        rho, _ = stats[k]
        if abs(rho) >= cfg.tau and padj < cfg.alpha:
            retained.append(k)
            hill = hill_score(
                cols[k],
                y,
                HillConfig(
                    whitelisted=(k, outcome_name) in cfg.whitelist,
                    proxy=cfg.proxies.get(k),
                    outcome_series=cfg.outcome_series,
                    seed=cfg.seed,
                    weights=cfg.hill_weights or dict(DEFAULT_HILL_WEIGHTS),
                ),
            )
            edges.append(
                CausalEdge(
                    src=k, dst=outcome_name, directed=True, rho=rho,
                    p_adj=float(padj),
                    sign="positive" if rho > 0 else "negative",
                    hill=hill,
                )
            )

    pairs = [(a, b) for i, a in enumerate(retained) for b in retained[i + 1 :]]
    if pairs:
        pair_stats = []
        for a, b in pairs:
            try:
                pair_stats.append(spearman(cols[a], cols[b]))
            except ZeroVariance:
                pair_stats.append((0.0, 1.0))
        pair_adj = _bh_adjust(np.array([s[1] for s in pair_stats]))
        for (a, b), (rho, _), padj in zip(pairs, pair_stats, pair_adj):
            if abs(rho) >= cfg.tau and padj < cfg.alpha:
                edges.append(
                    CausalEdge(
                        src=a, dst=b, directed=False, rho=rho,
                        p_adj=float(padj),
                        sign="positive" if rho > 0 else "negative",
                    )
                )
    return CausalStructure(
        nodes=tuple(candidates) + (outcome_name,),
        edges=tuple(edges),
        tau=cfg.tau,
        alpha=cfg.alpha,
    )


# --- local-level state-space model ---


@dataclass(frozen=True)
class LocalLevelModel:
    sigma_obs: float  # observation noise standard deviation
    sigma_level: float  # level innovation standard deviation
    final_mean: float
    final_var: float
    loglik: float
    degenerate: bool = False

    @property
    def obs_var(self) -> float:
        return self.sigma_obs**2

    @property
    def level_var(self) -> float:
        return self.sigma_level**2


def kalman_filter(y, obs_var: float, level_var: float):
    """Filter the local-level model y_t = mu_t + eps, mu_{t+1} = mu_t + eta.

    Initialization: m_1 = y_1, C_1 = obs_var; the innovation likelihood
    starts at t = 2.  Returns (m, C, pred_mean, pred_var, loglik) where
    pred_mean/pred_var are the one-step-ahead observation predictions
    (pred_var = P_t + obs_var; entry 0 refers to t = 1 and equals
    (y_1, C_1 + obs_var) by convention).
    """
    y = np.asarray(y, dtype=float)
    t_len = y.shape[0]
    m = np.empty(t_len)
    c = np.empty(t_len)
    pred_mean = np.empty(t_len)
    pred_var = np.empty(t_len)
    m[0] = y[0]
    c[0] = obs_var
    pred_mean[0] = y[0]
    pred_var[0] = c[0] + obs_var
    loglik = 0.0
    for t in range(1, t_len):
        a = m[t - 1]
        p = c[t - 1] + level_var
        f = p + obs_var
        v = y[t] - a
        k = p / f
        m[t] = a + k * v
        c[t] = (1.0 - k) * p
        pred_mean[t] = a
        pred_var[t] = f
        loglik += -0.5 * (math.log(2.0 * math.pi * f) + v * v / f)
    return m, c, pred_mean, pred_var, loglik


def _grid_loglik(y: np.ndarray, obs_vars: np.ndarray, level_vars: np.ndarray) -> np.ndarray:
    """Innovation log-likelihood for every (obs_var, level_var) lane at once."""
    g = obs_vars.shape[0]
    m = np.full(g, y[0])
    c = obs_vars.copy()
    ll = np.zeros(g)
    for t in range(1, y.shape[0]):
        p = c + level_vars
        f = p + obs_vars
        v = y[t] - m
        k = p / f
        m = m + k * v
        c = (1.0 - k) * p
        ll += -0.5 * (np.log(2.0 * math.pi * f) + v * v / f)
    return ll


def fit_local_level(y_pre) -> LocalLevelModel:
    """Maximum-likelihood variances over a 50x50 logarithmic grid spanning
    [1e-6, 1e2] x var(y_pre); fully deterministic.  A zero-variance series
    uses a floored grid base and sets the ``degenerate`` flag."""
    y = np.asarray(y_pre, dtype=float)
    if y.shape[0] < 10:
        raise PrePeriodTooShort(f"need >= 10 pre-period points, have {y.shape[0]}")
    base = float(y.var(ddof=0))
    degenerate = not (base > 0.0)
    if degenerate:
        base = 1e-12
    grid = base * np.logspace(-6.0, 2.0, 50)
    obs_vars = np.repeat(grid, 50)
    level_vars = np.tile(grid, 50)
    ll = _grid_loglik(y, obs_vars, level_vars)
    best = int(np.argmax(ll))
    obs_var = float(obs_vars[best])
    level_var = float(level_vars[best])
    m, c, _, _, loglik = kalman_filter(y, obs_var, level_var)
    return LocalLevelModel(
        sigma_obs=math.sqrt(obs_var),
        sigma_level=math.sqrt(level_var),
        final_mean=float(m[-1]),
        final_var=float(c[-1]),
        loglik=float(loglik),
        degenerate=degenerate,
    )


# --- intervention impact ---


@dataclass(frozen=True)
class ImpactResult:
    intervention_date: dt.date
    dates: tuple
    observed: np.ndarray
    cf_mean: np.ndarray
    cf_lower: np.ndarray
    cf_upper: np.ndarray
    post_start: int  # index of the first post-intervention date
    cumulative_effect: tuple  # (point, lower, upper)
    relative_effect_pct: tuple  # (point, lower, upper)
    tail_prob: float


def causal_impact(
    dates: Sequence[dt.date],
    y,
    intervention_date: dt.date,
    controls=None,
    n_sims: int = 1000,
    seed: int = 0,
) -> ImpactResult:
    """Counterfactual intervention effect from the pre-period model.

    Optional controls are regressed out by pre-period least squares first;
    the residual series is modeled by ``fit_local_level`` and its seeded
    forecast simulation supplies post-period intervals.  Pointwise pre-period
    counterfactuals are the one-step-ahead filter predictions.
    """
    y = np.asarray(y, dtype=float)
    dates = list(dates)
    if len(dates) != y.shape[0]:
        raise LengthMismatch("dates and y lengths differ")
    if any(b <= a for a, b in zip(dates[:-1], dates[1:])):
        raise ValueError("dates must be strictly increasing")
    post0 = next((i for i, d in enumerate(dates) if d >= intervention_date), None)
    if post0 is None or intervention_date <= dates[0]:
        raise InterventionOutOfRange(
            f"intervention {intervention_date} outside the observed span"
        )
    n_pre = post0
    n_post = len(dates) - post0
    if n_pre < 10:
        raise InsufficientPrePeriod(f"{n_pre} pre-period points < 10")
    if n_post < 3:
        raise InterventionOutOfRange(f"{n_post} post-period points < 3")

    if controls is not None:
        z = np.asarray(controls, dtype=float)
        if z.ndim == 1:
            z = z[:, None]
        if z.shape[0] != y.shape[0]:
            raise LengthMismatch("controls and y lengths differ")
        design = np.concatenate([np.ones((z.shape[0], 1)), z], axis=1)
        gamma, *_ = np.linalg.lstsq(design[:post0], y[:post0], rcond=None)
        control_part = design @ gamma
    else:
        control_part = np.zeros_like(y)
    r = y - control_part

    model = fit_local_level(r[:post0])
    m, c, pred_mean, pred_var, _ = kalman_filter(
        r[:post0], model.obs_var, model.level_var
    )

    rng = np.random.default_rng(seed)
    level = model.final_mean + math.sqrt(max(model.final_var, 0.0)) * rng.standard_normal(n_sims)
    sims = np.empty((n_sims, n_post))
    for j in range(n_post):
        level = level + model.sigma_level * rng.standard_normal(n_sims)
        sims[:, j] = level + model.sigma_obs * rng.standard_normal(n_sims)
    sims = sims + control_part[post0:][None, :]

    cf_mean = np.empty_like(y)
    cf_lower = np.empty_like(y)
    cf_upper = np.empty_like(y)
    half = 1.96 * np.sqrt(pred_var)
    cf_mean[:post0] = pred_mean + control_part[:post0]
    cf_lower[:post0] = cf_mean[:post0] - half
    cf_upper[:post0] = cf_mean[:post0] + half
    cf_mean[post0:] = sims.mean(axis=0)
    cf_lower[post0:] = np.percentile(sims, 2.5, axis=0)
    cf_upper[post0:] = np.percentile(sims, 97.5, axis=0)

    obs_cum = float(y[post0:].sum())
    cf_cum = sims.sum(axis=1)
    effects = obs_cum - cf_cum
    cum_point = float(effects.mean())
    cum_lo, cum_hi = (float(q) for q in np.percentile(effects, [2.5, 97.5]))

    scale = max(float(np.abs(cf_cum).max()), 1.0) * 1e-9
    safe = np.where(np.abs(cf_cum) < scale, np.copysign(scale, cf_cum + (cf_cum == 0.0)), cf_cum)
    rel = 100.0 * effects / safe
    rel_point = float(rel.mean())
    rel_lo, rel_hi = (float(q) for q in np.percentile(rel, [2.5, 97.5]))

    if cum_point >= 0.0:
        tail = float(np.mean(cf_cum >= obs_cum))
    else:
        tail = float(np.mean(cf_cum <= obs_cum))

    return ImpactResult(
        intervention_date=intervention_date,
        dates=tuple(dates),
        observed=y,
        cf_mean=cf_mean,
        cf_lower=cf_lower,
        cf_upper=cf_upper,
        post_start=post0,
        cumulative_effect=(cum_point, cum_lo, cum_hi),
        relative_effect_pct=(rel_point, min(rel_lo, rel_hi), max(rel_lo, rel_hi)),
        tail_prob=tail,
    )
