"""Local cluster statistics, space-time binning, and trend-based
classification of evolving high-activity areas.

The per-snapshot statistic is the self-inclusive neighborhood z-score
(large positive = the unit and its neighbors jointly high).  The temporal
extension evaluates that statistic per time bin over a dense units-by-bins
count cube and classifies each unit from its hot/not sequence plus the
monotone-trend z of its score series.
"""

from __future__ import annotations

import datetime as dt
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np
from scipy import special

from .errors import SeriesTooShort
from .geo import SpatialWeights
from .ingest import Calendar

_HOT_P = 0.05  # per-bin hot rule for the temporal classifier: z > 0, p <= 0.05


class HotKlass(str, Enum):
    HOT99 = "hot99"
    HOT95 = "hot95"
    HOT90 = "hot90"
    COLD90 = "cold90"
    COLD95 = "cold95"
    COLD99 = "cold99"
    NOT_SIGNIFICANT = "not_significant"


class Pattern(str, Enum):
    NEW = "new"
    INTENSIFYING = "intensifying"
    PERSISTENT = "persistent"
    DIMINISHING = "diminishing"
    SPORADIC = "sporadic"
    NONE = "none"


@dataclass(frozen=True)
class GStarField:
    z: np.ndarray
    p: np.ndarray  # two-sided, standard normal
    zero_variance: bool = False


@dataclass(frozen=True)
class HotspotResult:
    unit_ids: tuple
    z: np.ndarray
    p: np.ndarray
    p_adj: np.ndarray
    klass: tuple  # HotKlass per unit
    fdr: bool
    zero_variance: bool = False


@dataclass(frozen=True)
class SpaceTimeCube:
    unit_ids: tuple
    bins: tuple  # bin start dates, uniform width, contiguous
    counts: np.ndarray  # n x T
    bin_width: Calendar

    def __post_init__(self):
        n, t = self.counts.shape
        if n != len(self.unit_ids) or t != len(self.bins):
            raise ValueError("counts shape must be (units, bins)")
        if np.any(self.counts < 0):
            raise ValueError("counts must be nonnegative")
        step = 1 if self.bin_width is Calendar.DAILY else 7
        for a, b in zip(self.bins[:-1], self.bins[1:]):
            if (b - a).days != step:
                raise ValueError("bins must be uniform and contiguous")

    def total(self) -> float:
        return float(self.counts.sum())


@dataclass(frozen=True)
class EmergingHotspotResult:
    unit_ids: tuple
    pattern: tuple  # Pattern per unit
    mk_z: np.ndarray
    hot_bin_count: np.ndarray  # integer per unit
    z_by_bin: np.ndarray  # n x T score matrix the classification is based on
    bins: tuple


def getis_ord_gstar(values, weights: SpatialWeights) -> GStarField:
    """Neighborhood-sum z-score per unit, self-inclusive.

    z_i = (sum_j w_ij x_j - xbar * W_i) / (S * sqrt((n*sum_j w_ij^2 - W_i^2)/(n-1)))
    with xbar and S the global mean and population standard deviation.
    A constant field has no spatial signal: the result degrades to all
    z = 0, p = 1 with ``zero_variance`` set instead of raising.
    """
    x = np.asarray(values, dtype=float)
    n = x.shape[0]
    if n < 3:
        raise ValueError(f"need at least 3 units, have {n}")
    if not np.all(np.isfinite(x)):
        raise ValueError("values must be finite")
    if weights.n != n:
        raise ValueError(f"weights built for {weights.n} units, values have {n}")
    if not weights.includes_self:
        raise ValueError("statistic requires self-inclusive weights")

    xbar = float(x.mean())
    s = float(x.std(ddof=0))
    if s == 0.0:
        return GStarField(z=np.zeros(n), p=np.ones(n), zero_variance=True)

    w = weights.to_dense()
    wsum = w.sum(axis=1)
    w2sum = (w**2).sum(axis=1)
    num = w @ x - xbar * wsum
    inner = (n * w2sum - wsum**2) / (n - 1)
    z = np.zeros(n)
    p = np.ones(n)
    ok = inner > 0.0
    z[ok] = num[ok] / (s * np.sqrt(inner[ok]))
    p[ok] = special.erfc(np.abs(z[ok]) / math.sqrt(2.0))
    return GStarField(z=z, p=p, zero_variance=False)


def benjamini_hochberg(p) -> np.ndarray:
    """Step-up false-discovery-rate adjusted p-values, clamped to 1."""
    p = np.asarray(p, dtype=float)
    m = p.shape[0]
    order = np.argsort(p, kind="stable")
    adj = p[order] * m / np.arange(1, m + 1)
    adj = np.minimum.accumulate(adj[::-1])[::-1]
    out = np.empty(m)
    out[order] = np.minimum(adj, 1.0)
    return out


def _klass(z: float, p_eff: float) -> HotKlass:
    if z > 0.0:
        if p_eff < 0.01:
            return HotKlass.HOT99
        if p_eff < 0.05:
            return HotKlass.HOT95
        if p_eff < 0.10:
            return HotKlass.HOT90
    elif z < 0.0:
        if p_eff < 0.01:
            return HotKlass.COLD99
        if p_eff < 0.05:
            return HotKlass.COLD95
        if p_eff < 0.10:
            return HotKlass.COLD90
    return HotKlass.NOT_SIGNIFICANT


def classify_hotspots(z, p, fdr: bool, unit_ids=None, *, zero_variance: bool = False) -> HotspotResult:
    """Seven-class labeling at adjusted-p thresholds 0.01/0.05/0.10."""
    z = np.asarray(z, dtype=float)
    p = np.asarray(p, dtype=float)
    if z.shape != p.shape:
        raise ValueError("z and p must have the same length")
    n = z.shape[0]
    if unit_ids is None:
        unit_ids = tuple(str(i) for i in range(n))
    else:
        unit_ids = tuple(unit_ids)
        if len(unit_ids) != n:
            raise ValueError("unit_ids length must match z")
    p_adj = benjamini_hochberg(p) if fdr else p.copy()
    klass = tuple(_klass(float(z[i]), float(p_adj[i])) for i in range(n))
    return HotspotResult(
        unit_ids=unit_ids, z=z, p=p, p_adj=p_adj, klass=klass, fdr=fdr,
        zero_variance=zero_variance,
    )


def _monday_on_or_before(d: dt.date) -> dt.date:
    return d - dt.timedelta(days=d.weekday())


def build_cube(series, bin_width) -> SpaceTimeCube:
    """Dense units-by-bins count matrix with zero fill.

    Bins span [min date, max date] of the series; weekly bins start Monday.
    Counts come from the unstratified ("all") cells.
    """
    bin_width = Calendar(bin_width)
    unit_ids = tuple(series.unit_ids)
    index = {u: i for i, u in enumerate(unit_ids)}
    cells = [
        (unit_id, date, count)
        for (unit_id, date, stratum), count in series.cells.items()
        if stratum == "all"
    ]
    if not cells:
        raise ValueError("series has no cells")
    dates = [c[1] for c in cells]
    lo, hi = min(dates), max(dates)
    if bin_width is Calendar.DAILY:
        bins = tuple(lo + dt.timedelta(days=i) for i in range((hi - lo).days + 1))
        pos = {d: i for i, d in enumerate(bins)}
        locate = lambda d: pos[d]
    else:
        start = _monday_on_or_before(lo)
        nbins = ((_monday_on_or_before(hi) - start).days // 7) + 1
        bins = tuple(start + dt.timedelta(weeks=i) for i in range(nbins))
        locate = lambda d: (_monday_on_or_before(d) - start).days // 7
    counts = np.zeros((len(unit_ids), len(bins)))
    for unit_id, date, count in cells:
        counts[index[unit_id], locate(date)] += count
    return SpaceTimeCube(unit_ids=unit_ids, bins=bins, counts=counts, bin_width=bin_width)


def mann_kendall(series) -> tuple:
    """Monotone-trend statistic S and its continuity-corrected z.

    Variance uses the tie-corrected form; S = 0 maps to z = 0 exactly.
    """
    x = np.asarray(series, dtype=float)
    t = x.shape[0]
    if t < 4:
        raise SeriesTooShort(f"need at least 4 observations, have {t}")
    s = 0
    for k in range(t - 1):
        s += int(np.sign(x[k + 1:] - x[k]).sum())
    _, tie_counts = np.unique(x, return_counts=True)
    tie_term = sum(c * (c - 1) * (2 * c + 5) for c in tie_counts if c > 1)
    var = (t * (t - 1) * (2 * t + 5) - tie_term) / 18.0
    if s == 0 or var <= 0.0:
        return s, 0.0
    z = (s - 1.0) / math.sqrt(var) if s > 0 else (s + 1.0) / math.sqrt(var)
    return s, float(z)


def emerging_hotspot(cube: SpaceTimeCube, weights: SpatialWeights) -> EmergingHotspotResult:
    """Classify each unit's spatiotemporal behavior over the cube.

    Per bin, compute the neighborhood z-score field; a unit is "hot" in a
    bin when z > 0 and p <= 0.05.  Classes: new = hot only in the final
    bin; over >= 90% of bins, the trend z of the score series splits
    intensifying (> 1.96) / diminishing (< -1.96) / persistent (between);
    any other unit with at least one hot bin is sporadic, otherwise none.
    """
    n, t = cube.counts.shape
    if t < 4:
        raise SeriesTooShort(f"need at least 4 bins, have {t}")
    z = np.zeros((n, t))
    hot = np.zeros((n, t), dtype=bool)
    for j in range(t):
        g = getis_ord_gstar(cube.counts[:, j], weights)
        z[:, j] = g.z
        hot[:, j] = (g.z > 0.0) & (g.p <= _HOT_P)

    patterns = []
    mk = np.zeros(n)
    counts = hot.sum(axis=1)
    for i in range(n):
        _, mk[i] = mann_kendall(z[i])
        c = int(counts[i])
        if c == 0:
            patterns.append(Pattern.NONE)
        elif c == 1 and hot[i, -1]:
            patterns.append(Pattern.NEW)
        elif c / t >= 0.9 - 1e-12:
            if mk[i] > 1.96:
                patterns.append(Pattern.INTENSIFYING)
            elif mk[i] < -1.96:
                patterns.append(Pattern.DIMINISHING)
            else:
                patterns.append(Pattern.PERSISTENT)
        else:
            patterns.append(Pattern.SPORADIC)
    return EmergingHotspotResult(
        unit_ids=cube.unit_ids,
        pattern=tuple(patterns),
        mk_z=mk,
        hot_bin_count=counts.astype(int),
        z_by_bin=z,
        bins=cube.bins,
    )
