"""
Exponential decay fits of survival curves and the total-variation bound
derived from them.
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

import config
from estimators.survival import SurvivalCurve
from utils import AllZeroTail, WindowTooSparse

logger = logging.getLogger(__name__)

MIN_POINTS = 5


@dataclass
class RateFit:
    b_hat: float
    c_hat: float
    window: Tuple[float, float]
    confidence: Tuple[float, float]
    r_squared: float
    n_points: int
    n_replicas: int = 0
    residuals: np.ndarray = field(default_factory=lambda: np.empty(0))

    @property
    def b_lo(self):
        return self.confidence[0]

    @property
    def b_hi(self):
        return self.confidence[1]

    def to_row(self, N):
        return (N, self.b_hat, self.b_lo, self.b_hi, self.c_hat, self.window[0], self.window[1], self.n_replicas)


FIT_HEADER = ("N", "b_hat", "b_lo", "b_hi", "c_hat", "window_lo", "window_hi", "n_replicas")


def default_window(N):
    return (config.FIT_WINDOW_LO * N ** 2, config.FIT_WINDOW_HI * N ** 2)


def _fit_points(curve, window):
    lo, hi = window
    in_window = (curve.grid >= lo) & (curve.grid <= hi)
    if np.count_nonzero(in_window) < MIN_POINTS:
        raise WindowTooSparse(f"{np.count_nonzero(in_window)} grid points in [{lo}, {hi}], need {MIN_POINTS}")
    t = curve.grid[in_window]
    p = curve.p_hat[in_window]
    positive = p > 0
    if np.count_nonzero(positive) < MIN_POINTS:
        if np.any(~positive):
            raise AllZeroTail(f"every replica is extinct inside [{lo}, {hi}]; "
                              f"{np.count_nonzero(positive)} points with p_hat > 0")
        raise WindowTooSparse(f"fewer than {MIN_POINTS} usable points in [{lo}, {hi}]")
    if not np.all(positive):
        # the log-linear fit stops at the first point where every replica has died
        cut = int(np.argmin(positive))
        logger.info("fit window truncated at t=%s where p_hat reaches 0", t[cut])
        t = t[:cut]
        p = p[:cut]
        if len(t) < MIN_POINTS:
            raise AllZeroTail(f"only {len(t)} points before all replicas die in [{lo}, {hi}]")
    return t, p


def _weighted_line(t, p, n):
    y = np.log(p)
    if n:
        # delta method: var(log p_hat) = (1 - p) / (n p)
        var = (1.0 - p) / (n * p)
        var = np.maximum(var, 1.0 / (n * n))
        w = 1.0 / np.sqrt(var)
    else:
        w = np.ones_like(y)
    slope, intercept = np.polyfit(t, y, 1, w=w)
    fitted = slope * t + intercept
    resid = y - fitted
    ybar = np.average(y, weights=w ** 2)
    ss_tot = float(np.sum(w ** 2 * (y - ybar) ** 2))
    ss_res = float(np.sum(w ** 2 * resid ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return slope, intercept, r2, resid


def fit_exponential_rate(curve: SurvivalCurve, window=None, N=None, rng=None, rounds=None) -> RateFit:
    """
    Weighted least squares of log p_hat against t over the window.

    The window defaults to [FIT_WINDOW_LO N^2, FIT_WINDOW_HI N^2] when N is
    given and to the whole grid otherwise. The confidence interval comes from
    a bootstrap over replicas when raw extinction times are available.
    """
    if window is None:
        window = default_window(N) if N is not None else (float(curve.grid[0]), float(curve.grid[-1]))
    window = (float(window[0]), float(window[1]))
    t, p = _fit_points(curve, window)
    slope, intercept, r2, resid = _weighted_line(t, p, curve.n_replicas)
    b_hat = -slope
    c_hat = math.exp(intercept)
    confidence = _bootstrap_interval(curve, window, rng, rounds, b_hat)
    logger.info("fit on [%s, %s]: b_hat=%.6g c_hat=%.4g R2=%.4f (%d points)", window[0], window[1],
                b_hat, c_hat, r2, len(t))
    return RateFit(
        b_hat=float(b_hat),
        c_hat=float(c_hat),
        window=window,
        confidence=confidence,
        r_squared=float(r2),
        n_points=len(t),
        n_replicas=curve.n_replicas,
        residuals=resid,
    )


def _bootstrap_interval(curve, window, rng, rounds, b_hat):
    if curve.extinction_times is None or curve.n_replicas < 2:
        return (float(b_hat), float(b_hat))
    rounds = config.BOOTSTRAP_ROUNDS if rounds is None else rounds
    rng = np.random.default_rng(0) if rng is None else rng
    deaths = curve.extinction_times
    slopes = []
    for _ in range(rounds):
        resampled = SurvivalCurve.from_extinction_times(rng.choice(deaths, size=len(deaths)), curve.grid,
                                                        curve.horizon)
        try:
            t, p = _fit_points(resampled, window)
        except (WindowTooSparse, AllZeroTail):
            continue
        slopes.append(-_weighted_line(t, p, resampled.n_replicas)[0])
    if len(slopes) < max(2, rounds // 2):
        logger.warning("bootstrap: only %d of %d rounds produced a fit", len(slopes), rounds)
    if not slopes:
        return (math.nan, math.nan)
    lo, hi = np.percentile(slopes, [2.5, 97.5])
    return (float(lo), float(hi))


@dataclass
class TvBound:
    """
    Coupling upper bound (2N+1) P[z1 alive at t] on the total variation
    distance to stationarity. It bounds the distance; it does not estimate it.
    """
    grid: np.ndarray
    bound: np.ndarray
    stderr: np.ndarray
    N: int
    is_upper_bound: bool = True

    def dominates(self, exact, sigma_tol=None):
        """True where bound + sigma_tol * stderr >= exact, element-wise."""
        sigma_tol = config.THRESHOLDS.sigma_tol if sigma_tol is None else sigma_tol
        return self.bound + sigma_tol * self.stderr >= np.asarray(exact)

    def to_rows(self):
        return [(float(t), float(b), float(s)) for t, b, s in zip(self.grid, self.bound, self.stderr)]


def tv_bound(curve: SurvivalCurve, N) -> TvBound:
    size = 2 * N + 1
    return TvBound(curve.grid, size * curve.p_hat, size * curve.stderr, N)
