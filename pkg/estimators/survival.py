import math
from dataclasses import dataclass
from typing import Optional

import numpy as np


@dataclass
class SurvivalCurve:
    """
    Empirical survival probability on a time grid, built from per-replica
    extinction times (math.inf for replicas still alive at the horizon).
    """
    grid: np.ndarray
    p_hat: np.ndarray
    stderr: np.ndarray
    n_alive: np.ndarray
    n_replicas: int
    extinction_times: Optional[np.ndarray] = None
    horizon: float = math.nan
    mean_discrepancy_fraction: Optional[np.ndarray] = None
    fraction_stderr: Optional[np.ndarray] = None

    @classmethod
    def from_extinction_times(cls, deaths, grid, horizon=None):
        deaths = np.asarray(deaths, dtype=float)
        grid = np.asarray(grid, dtype=float)
        n = len(deaths)
        if n == 0:
            raise ValueError("a survival curve needs at least one replica")
        ordered = np.sort(deaths)
        # alive at t means death strictly after t
        n_alive = n - np.searchsorted(ordered, grid, side="right")
        p_hat = n_alive / n
        stderr = np.sqrt(p_hat * (1.0 - p_hat) / n)
        return cls(
            grid=grid,
            p_hat=p_hat,
            stderr=stderr,
            n_alive=n_alive.astype(np.int64),
            n_replicas=n,
            extinction_times=deaths,
            horizon=float(grid[-1]) if horizon is None else float(horizon),
        )

    @classmethod
    def from_probabilities(cls, grid, p, n_replicas=None):
        """A curve from known probabilities; with n_replicas the binomial errors are attached."""
        grid = np.asarray(grid, dtype=float)
        p = np.asarray(p, dtype=float)
        if n_replicas:
            stderr = np.sqrt(p * (1.0 - p) / n_replicas)
            n_alive = np.rint(p * n_replicas).astype(np.int64)
        else:
            stderr = np.zeros_like(p)
            n_alive = np.zeros(len(p), dtype=np.int64)
        return cls(grid, p, stderr, n_alive, int(n_replicas or 0))

    def censored_times(self):
        """Extinction times with survivors set to the horizon."""
        if self.extinction_times is None:
            raise ValueError("curve carries no raw extinction times")
        return np.minimum(self.extinction_times, self.horizon)

    def at(self, t):
        """Survival estimate at the last grid point <= t."""
        k = int(np.searchsorted(self.grid, t, side="right")) - 1
        return float(self.p_hat[max(k, 0)])

    def to_rows(self):
        return [(float(t), float(p), float(s), int(a), self.n_replicas)
                for t, p, s, a in zip(self.grid, self.p_hat, self.stderr, self.n_alive)]
