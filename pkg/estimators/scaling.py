import logging
import math
from dataclasses import dataclass, field, replace
from typing import List

import numpy as np

import config
from estimators.fitting import fit_exponential_rate
from harris.coupled import StartPolicy, survival_samples

logger = logging.getLogger(__name__)

SCALING_HEADER = ("N", "b_hat", "b_hat_times_N2")
DETAIL_HEADER = ("N", "b_hat", "b_lo", "b_hi", "r_squared", "b_hat_times_N2", "p_at_N2", "p_at_N2_stderr",
                 "n_replicas", "horizon")


@dataclass
class ScalingRow:
    N: int
    b_hat: float
    b_lo: float
    b_hi: float
    r_squared: float
    p_at_N2: float
    p_at_N2_stderr: float
    n_replicas: int
    horizon: float

    @property
    def b_times_N2(self):
        return self.b_hat * self.N ** 2


@dataclass
class ScalingTable:
    rows: List[ScalingRow] = field(default_factory=list)
    fits: list = field(default_factory=list)
    curves: list = field(default_factory=list)

    @property
    def flatness(self):
        """max/min of b_hat N^2 over the table; 1 for a single row."""
        values = [r.b_times_N2 for r in self.rows]
        if not values:
            return math.nan
        return max(values) / min(values)

    def min_r_squared(self):
        return min(r.r_squared for r in self.rows)

    def to_rows(self):
        return [(r.N, r.b_hat, r.b_times_N2) for r in self.rows]

    def detail_rows(self):
        return [(r.N, r.b_hat, r.b_lo, r.b_hi, r.r_squared, r.b_times_N2, r.p_at_N2, r.p_at_N2_stderr,
                 r.n_replicas, r.horizon) for r in self.rows]


def default_horizon(N):
    return config.HORIZON_FACTOR * N ** 2


def scaling_table(base, N_list, horizon_policy=None, replicas=20_000, rng=None, workers=1, policy=None):
    """
    Tagged-discrepancy survival and its fitted decay rate for each N of
    N_list, with b_hat N^2 per N and the probability of survival up to N^2.
    """
    N_list = list(N_list)
    if any(b <= a for a, b in zip(N_list, N_list[1:])):
        raise ValueError(f"N_list must be strictly ascending, got {N_list}")
    horizon_policy = horizon_policy or default_horizon
    policy = policy or StartPolicy.uniform()
    rng = np.random.default_rng() if rng is None else rng
    children = rng.spawn(len(N_list))

    table = ScalingTable()
    for N, child in zip(N_list, children):
        params = replace(base, N=N)
        horizon = float(horizon_policy(N))
        sim_rng, fit_rng = child.spawn(2)
        curve = survival_samples(params, policy, horizon, replicas, sim_rng, track_total=False, workers=workers)
        fit = fit_exponential_rate(curve, N=N, rng=fit_rng)
        k = int(np.argmin(np.abs(curve.grid - N ** 2)))
        row = ScalingRow(N, fit.b_hat, fit.b_lo, fit.b_hi, fit.r_squared,
                         float(curve.p_hat[k]), float(curve.stderr[k]), replicas, horizon)
        logger.info("N=%d: b_hat=%.5g b_hat*N^2=%.4f R2=%.4f P(N^2)=%.4f", N, row.b_hat, row.b_times_N2,
                    row.r_squared, row.p_at_N2)
        table.rows.append(row)
        table.fits.append(fit)
        table.curves.append(curve)
    return table
