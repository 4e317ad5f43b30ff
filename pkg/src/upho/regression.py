"""Global and locally varying linear models over unit-level frames.

Provides ordinary least squares for the stationary case, a kernel-weighted
local regression producing per-location coefficient surfaces, corrected-AIC
bandwidth selection, and the global-versus-local comparison rule.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import (
    FrameMismatch,
    InsufficientRows,
    NoFeasibleBandwidth,
    NonpositiveBandwidth,
    SingularDesign,
    SingularLocalFit,
    ZeroVarianceColumn,
)
from .geo import GeoPoint, pairwise_km

# ln floor keeps AICc finite on exactly interpolating fits
_RSS_FLOOR = 1e-300


class Kernel(str, Enum):
    GAUSSIAN = "gaussian"
    BISQUARE = "bisquare"


class Preferred(str, Enum):
    GLOBAL = "global"
    LOCAL = "local"
    INCONCLUSIVE = "inconclusive"


def kernel_weight(d: float, bandwidth: float, kernel) -> float:
    """Distance-decay weight in [0, 1].

    Gaussian: exp(-(d/b)^2 / 2), strictly positive.  Bisquare:
    (1 - (d/b)^2)^2 for d < b, exactly zero beyond the bandwidth.
    """
    if not (bandwidth > 0.0):
        raise NonpositiveBandwidth(f"bandwidth {bandwidth} must be > 0")
    if d < 0.0:
        raise ValueError(f"distance {d} must be >= 0")
    k = Kernel(kernel)
    u = d / bandwidth
    if k is Kernel.GAUSSIAN:
        return float(math.exp(-0.5 * u * u))
    if u >= 1.0:
        return 0.0
    return float((1.0 - u * u) ** 2)


@dataclass(frozen=True)
class OLSResult:
    beta: np.ndarray  # length p+1, intercept first
    std_err: np.ndarray
    t_stats: np.ndarray
    residuals: np.ndarray  # length n
    r2: float
    adj_r2: float
    aicc: float
    vif: np.ndarray  # length p
    warnings: tuple = ()

    @property
    def n(self) -> int:
        return self.residuals.shape[0]


@dataclass(frozen=True)
class GWRResult:
    local_beta: np.ndarray  # n x (p+1), rows in frame unit order
    local_residuals: np.ndarray
    local_r2: np.ndarray
    kernel: Kernel
    bandwidth: float
    adaptive: bool
    aicc: float
    effective_params: float  # hat-matrix trace

    @property
    def n(self) -> int:
        return self.local_beta.shape[0]


@dataclass(frozen=True)
class ModelComparison:
    ols_aicc: float
    gwr_aicc: float
    preferred: Preferred
    delta: float  # ols_aicc - gwr_aicc; > 0 favors the local model


@dataclass(frozen=True)
class ScalingRecord:
    """Per-column centering/scaling applied to X; allows exact coefficient
    back-transform to the raw frame."""

    x_mean: np.ndarray
    x_scale: np.ndarray

    def unscale_beta(self, beta_std: np.ndarray) -> np.ndarray:
        beta_std = np.asarray(beta_std, dtype=float)
        slopes = beta_std[1:] / self.x_scale
        intercept = beta_std[0] - float(np.dot(slopes, self.x_mean))
        return np.concatenate(([intercept], slopes))


def _design(frame) -> tuple:
    y = np.asarray(frame.y, dtype=float)
    X = np.asarray(frame.X, dtype=float)
    if X.ndim != 2:
        raise ValueError("frame.X must be 2-dimensional")
    n, p = X.shape
    if y.shape != (n,):
        raise ValueError("frame.y length must match frame.X rows")
    A = np.concatenate([np.ones((n, 1)), X], axis=1)
    return y, X, A, n, p


def _column_name(frame, j: int) -> str:
    if j == 0:
        return "intercept"
    keys = list(getattr(frame, "predictor_keys", []) or [])
    return keys[j - 1] if j - 1 < len(keys) else f"x{j}"


def _aicc(n: int, rss: float, k: float) -> float:
    if n - k - 1.0 <= 0.0:
        return math.inf
    return n * math.log(max(rss / n, _RSS_FLOOR)) + 2.0 * k * n / (n - k - 1.0)


def _vif(X: np.ndarray) -> np.ndarray:
    n, p = X.shape
    if p == 1:
        return np.ones(1)
    sd = X.std(axis=0, ddof=0)
    if np.any(sd == 0.0):
        return np.full(p, np.inf)
    Z = (X - X.mean(axis=0)) / sd
    R = (Z.T @ Z) / n
    try:
        return np.maximum(np.diag(np.linalg.inv(R)), 1.0)
    except np.linalg.LinAlgError:
        return np.full(p, np.inf)


def fit_ols(frame) -> OLSResult:
    """Global least squares with intercept.

    Solved by orthogonal (QR) decomposition; the normal equations appear
    only in test oracles at toy scale.
    """
    y, X, A, n, p = _design(frame)
    if n < p + 2:
        raise InsufficientRows(f"n={n} rows < p+2={p + 2}")
    Q, R = np.linalg.qr(A)
    diag = np.abs(np.diag(R))
    tol = max(n, p + 1) * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
    bad = np.nonzero(diag <= tol)[0]
    if bad.size:
        col = _column_name(frame, int(bad[0]))
        raise SingularDesign(
            f"design matrix is rank-deficient (column {col!r})", column=col
        )
    beta = np.linalg.solve(R, Q.T @ y)
    residuals = y - A @ beta
    rss = float(residuals @ residuals)
    dof = n - p - 1
    sigma2 = rss / dof
    Rinv = np.linalg.solve(R, np.eye(p + 1))
    cov = sigma2 * (Rinv @ Rinv.T)
    std_err = np.sqrt(np.maximum(np.diag(cov), 0.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        t_stats = beta / std_err
    t_stats = np.where(np.isnan(t_stats), 0.0, t_stats)
    tss = float(((y - y.mean()) ** 2).sum())
    r2 = 1.0 if tss == 0.0 else min(max(1.0 - rss / tss, 0.0), 1.0)
    adj_r2 = 1.0 - (1.0 - r2) * (n - 1) / dof
    vif = _vif(X)
    warnings = tuple(
        f"VIF {vif[j]:.1f} for predictor {_column_name(frame, j + 1)!r} exceeds 10"
        for j in range(p)
        if np.isfinite(vif[j]) and vif[j] > 10.0
    )
    return OLSResult(
        beta=beta,
        std_err=std_err,
        t_stats=t_stats,
        residuals=residuals,
        r2=r2,
        adj_r2=adj_r2,
        aicc=_aicc(n, rss, p + 2),
        vif=vif,
        warnings=warnings,
    )


def _local_weights(
    dist_row: np.ndarray, kernel: Kernel, bandwidth: float, adaptive: bool, i: int
) -> np.ndarray:
    if adaptive:
        others = np.delete(dist_row, i)
        others.sort()
        b_i = float(others[int(bandwidth) - 1])
        if b_i <= 0.0:
            raise SingularLocalFit(i, "coincident centroids give a zero local bandwidth")
    else:
        b_i = float(bandwidth)
    u = dist_row / b_i
    if kernel is Kernel.GAUSSIAN:
        return np.exp(-0.5 * u * u)
    w = (1.0 - u * u) ** 2
    w[u >= 1.0] = 0.0
    return w


def fit_gwr(
    frame,
    centroids: Sequence[GeoPoint],
    kernel=Kernel.BISQUARE,
    bandwidth: float = None,
    adaptive: bool = True,
    *,
    identity_weights: bool = False,
) -> GWRResult:
    """Per-location weighted least squares over great-circle distances.

    ``bandwidth`` is km when fixed, a neighbor count when adaptive (the local
    bandwidth becomes the distance to the bandwidth-th nearest neighbor).
    ``identity_weights`` forces every local weight matrix to the identity,
    which must reproduce the global fit; kept as an executable cross-check.

    The corrected AIC uses the hat-matrix trace as the effective parameter
    count, accumulated in unit order so results do not depend on evaluation
    schedule.
    """
    y, X, A, n, p = _design(frame)
    if n < p + 2:
        raise InsufficientRows(f"n={n} rows < p+2={p + 2}")
    if len(centroids) != n:
        raise FrameMismatch(f"{len(centroids)} centroids for {n} units")
    kernel = Kernel(kernel)
    if not identity_weights:
        if adaptive:
            if bandwidth is None or int(bandwidth) != bandwidth:
                raise ValueError("adaptive bandwidth must be an integer neighbor count")
            bandwidth = int(bandwidth)
            if bandwidth < p + 2:
                raise NonpositiveBandwidth(
                    f"adaptive bandwidth {bandwidth} < p+2={p + 2}"
                )
            if bandwidth > n - 1:
                raise NonpositiveBandwidth(
                    f"adaptive bandwidth {bandwidth} exceeds n-1={n - 1} neighbors"
                )
        elif not (bandwidth is not None and bandwidth > 0.0):
            raise NonpositiveBandwidth(f"bandwidth {bandwidth} must be > 0")

    dist = pairwise_km(list(centroids))
    local_beta = np.empty((n, p + 1))
    fitted = np.empty(n)
    local_r2 = np.empty(n)
    trace_s = 0.0

    for i in range(n):
        if identity_weights:
            w = np.ones(n)
        else:
            w = _local_weights(dist[i], kernel, bandwidth, adaptive, i)
        sw = np.sqrt(w)
        Aw = A * sw[:, None]
        yw = y * sw
        Q, R = np.linalg.qr(Aw)
        diag = np.abs(np.diag(R))
        tol = n * np.finfo(float).eps * (diag.max() if diag.size else 0.0)
        if diag.size == 0 or diag.min() <= tol:
            raise SingularLocalFit(i)
        beta_i = np.linalg.solve(R, Q.T @ yw)
        local_beta[i] = beta_i
        fitted[i] = float(A[i] @ beta_i)

        # hat diagonal: w_ii * x_i^T (A^T W A)^-1 x_i, via the local QR
        Rinv_xi = np.linalg.solve(R.T, A[i])
        trace_s += float(w[i] * (Rinv_xi @ Rinv_xi))

        wsum = w.sum()
        ybar_w = float((w * y).sum() / wsum)
        tss_w = float((w * (y - ybar_w) ** 2).sum())
        rss_w = float((w * (y - A @ beta_i) ** 2).sum())
        local_r2[i] = 1.0 if tss_w <= 0.0 else min(max(1.0 - rss_w / tss_w, 0.0), 1.0)

    residuals = y - fitted
    rss = float(residuals @ residuals)
    return GWRResult(
        local_beta=local_beta,
        local_residuals=residuals,
        local_r2=local_r2,
        kernel=kernel,
        bandwidth=(float(bandwidth) if bandwidth is not None else math.inf),
        adaptive=bool(adaptive) and not identity_weights,
        aicc=_aicc(n, rss, trace_s + 1.0),
        effective_params=trace_s,
    )


def _gwr_aicc_or_inf(frame, centroids, kernel, bandwidth, adaptive) -> float:
    try:
        return fit_gwr(frame, centroids, kernel, bandwidth, adaptive).aicc
    except (SingularLocalFit, np.linalg.LinAlgError):
        return math.inf


def select_bandwidth(
    frame,
    centroids: Sequence[GeoPoint],
    kernel=Kernel.BISQUARE,
    adaptive: bool = True,
) -> float:
    """Bandwidth minimizing the local model's corrected AIC.

    Adaptive: exhaustive scan of integer neighbor counts in [p+2, n-1]
    (ties keep the smaller count).  Fixed: golden-section search on
    [b_min, b_max], where b_min guarantees at least p+2 positive weights
    at every location and b_max is the largest pairwise distance.
    """
    y, X, A, n, p = _design(frame)
    kernel = Kernel(kernel)

    if adaptive:
        lo, hi = p + 2, n - 1
        if lo > hi:
            raise NoFeasibleBandwidth(f"no integer neighbor count in [{lo}, {hi}]")
        best_b, best_a = None, math.inf
        for b in range(lo, hi + 1):
            a = _gwr_aicc_or_inf(frame, centroids, kernel, b, True)
            if a < best_a:
                best_b, best_a = b, a
        if best_b is None:
            raise NoFeasibleBandwidth("every candidate neighbor count was singular")
        return best_b

    dist = pairwise_km(list(centroids))
    if n < p + 3:
        raise NoFeasibleBandwidth(f"need at least p+3={p + 3} units, have {n}")
    part = np.sort(dist, axis=1)  # column 0 is the self distance 0
    b_min = float(part[:, p + 2].max()) * (1.0 + 1e-6)
    b_max = float(dist.max())
    if not b_min > 0.0:
        raise NoFeasibleBandwidth("coincident centroids")
    if b_max <= b_min:
        b_max = 2.0 * b_min

    def objective(b: float) -> float:
        return _gwr_aicc_or_inf(frame, centroids, kernel, b, False)

    invphi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = b_min, b_max
    c = b - invphi * (b - a)
    d = a + invphi * (b - a)
    fc, fd = objective(c), objective(d)
    for _ in range(80):
        if b - a <= 1e-4 * b_max:
            break
        if fc <= fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = objective(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = objective(d)
    candidates = [(objective(a), a), (fc, c), (fd, d), (objective(b), b)]
    best = min(candidates, key=lambda t: (t[0], t[1]))
    if not math.isfinite(best[0]):
        raise NoFeasibleBandwidth("no bandwidth produced a nonsingular fit")
    return float(best[1])


def compare_models(ols: OLSResult, gwr: GWRResult) -> ModelComparison:
    """Corrected-AIC decision with a substantial-support margin of 3."""
    if ols.n != gwr.n:
        raise FrameMismatch(f"models fit on different n: {ols.n} != {gwr.n}")
    delta = ols.aicc - gwr.aicc
    if delta > 3.0:
        preferred = Preferred.LOCAL
    elif delta < -3.0:
        preferred = Preferred.GLOBAL
    else:
        preferred = Preferred.INCONCLUSIVE
    return ModelComparison(
        ols_aicc=ols.aicc, gwr_aicc=gwr.aicc, preferred=preferred, delta=delta
    )


def standardize(frame):
    """Center and scale predictor columns to zero mean, unit variance.

    Returns ``(frame_copy, ScalingRecord)``; the record inverts fitted
    coefficients back to the raw scale exactly.  Scaling uses the population
    standard deviation.
    """
    X = np.asarray(frame.X, dtype=float)
    mean = X.mean(axis=0)
    scale = X.std(axis=0, ddof=0)
    zero = np.nonzero(scale == 0.0)[0]
    if zero.size:
        col = _column_name(frame, int(zero[0]) + 1)
        raise ZeroVarianceColumn(f"predictor {col!r} is constant")
    Xs = (X - mean) / scale
    return dataclasses.replace(frame, X=Xs), ScalingRecord(x_mean=mean, x_scale=scale)
