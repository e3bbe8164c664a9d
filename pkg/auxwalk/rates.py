"""
Conditional boundary rates of the auxiliary walk, estimated from the coupled
current-reservoir process.

For the tagged discrepancy z at time t:

    d(N, t)   = (j/2N) E[1 - eta0(N-1, t) | z_t = N]      death at N
    a(N, t)   = (j/2N) E[eta0(N-1, t)     | z_t = N]      extra jump N -> N-1
    d(N-1, t) = (j/2N) E[eta1(N, t)       | z_t = N-1]    death at N-1

and the mirror images on the left with eta0 and eta1 exchanged. The death rate
at N is bounded below by (j/2N) P[both copies occupy N-1 | z_t = N]. Time is cut
into bins; each bin's estimate is the average over replicas whose tag sits
at the site at the bin midpoint. Bins nobody visited are MISSING (NaN).
"""
import logging
import math
from dataclasses import dataclass
from functools import partial

import numpy as np

import config
from harris.coupled import ONE, ZERO, CoupledSimulator, StartPolicy
from lattice.configuration import ModelKind, coerce_initial
from utils import WrongModel, warn_insufficient_support
from workers.replica_pool import run_replicas

logger = logging.getLogger(__name__)

MISSING = math.nan

RATE_HEADER = ("bin_start", "bin_end", "site", "rate_kind", "value", "support")


def boundary_sites(N):
    """Sites where the auxiliary walk can die: +-N and +-(N-1), merged at N=1."""
    return sorted({-N, -N + 1, N - 1, N})


def default_bin_width(N):
    return max(1.0, N ** 2 / config.BIN_DIVISOR)


def default_time_bins(N, horizon):
    width = default_bin_width(N)
    n_bins = max(1, int(math.ceil(horizon / width - 1e-9)))
    return np.arange(n_bins + 1) * width


def as_policy(z0):
    if isinstance(z0, StartPolicy):
        return z0
    if z0 is None or z0 == "uniform":
        return StartPolicy.uniform()
    return StartPolicy.fixed(int(z0))


def environment(s, z, N):
    """(death indicator, extra-jump indicator, lower-bound indicator) for a tag at z in states s."""
    d = a = low = 0
    edge_r, inner_r = 2 * N, 2 * N - 1
    if z == N:
        a += s[inner_r] == ZERO
        d += s[inner_r] != ZERO
        low += s[inner_r] == ONE
    if z == -N:
        a += s[1] == ONE
        d += s[1] != ONE
        low += s[1] == ZERO
    if z == N - 1:
        d += s[edge_r] == ONE
    if z == -N + 1:
        d += s[0] == ZERO
    return int(d), int(a), int(low)


@dataclass
class RateTable:
    """Per-bin sums of the environment indicators and their support, one row per boundary site."""
    N: int
    j: float
    edges: np.ndarray
    sites: tuple
    support: np.ndarray
    d_sum: np.ndarray
    a_sum: np.ndarray
    low_sum: np.ndarray
    extinction_times: np.ndarray = None

    @property
    def rate(self):
        return self.j / (2 * self.N)

    @property
    def n_bins(self):
        return len(self.edges) - 1

    @classmethod
    def empty(cls, N, j, edges):
        sites = tuple(boundary_sites(N))
        shape = (len(sites), len(edges) - 1)
        return cls(N, j, np.asarray(edges, dtype=float), sites, np.zeros(shape, dtype=np.int64),
                   np.zeros(shape), np.zeros(shape), np.zeros(shape))

    @classmethod
    def from_rates(cls, N, j, edges, d=None, a=None):
        """
        A fully supported table from explicit rates: d and a map a site to a
        constant or to an array over bins. Unlisted sites get rate 0.
        """
        table = cls.empty(N, j, edges)
        table.support[:] = 1
        for target, values in ((table.d_sum, d or {}), (table.a_sum, a or {})):
            for x, v in values.items():
                target[table.sites.index(x)] = np.broadcast_to(np.asarray(v, dtype=float), table.n_bins) / table.rate
        return table

    def row(self, x):
        return self.sites.index(x)

    def _ratio(self, sums):
        with np.errstate(invalid="ignore", divide="ignore"):
            out = self.rate * sums / self.support
        out[self.support == 0] = MISSING
        return out

    def d_rates(self):
        return self._ratio(self.d_sum)

    def a_rates(self):
        return self._ratio(self.a_sum)

    def lower_bound_rates(self):
        return self._ratio(self.low_sum)

    def lower_bound_violations(self):
        """Supported (site, bin) cells where the death rate falls below its lower-bound estimate."""
        d = self.d_rates()
        low = self.lower_bound_rates()
        with np.errstate(invalid="ignore"):
            bad = (self.support > 0) & (d < low - 1e-12)
        rows, cols = np.nonzero(bad)
        return [(self.sites[r], int(c)) for r, c in zip(rows, cols)]

    def d(self, x, k):
        """Death rate at site x in bin k; 0 away from the boundary sites."""
        if x not in self.sites:
            return 0.0
        return float(self.d_rates()[self.row(x), k])

    def a(self, x, k):
        if x not in self.sites:
            return 0.0
        return float(self.a_rates()[self.row(x), k])

    def death_bound(self, x):
        """Upper bound of d(x, .): j/2N per window x belongs to (two for site 0 at N=1)."""
        return sum(x == y for y in (self.N, self.N - 1, -self.N, -self.N + 1)) * self.rate

    def bin_of(self, t):
        return int(np.searchsorted(self.edges, t, side="right")) - 1

    def covers(self, horizon):
        return self.edges[0] <= 0.0 and self.edges[-1] >= horizon

    def needed_bins(self, horizon):
        return int(np.searchsorted(self.edges, horizon, side="left"))

    def missing(self, horizon):
        """(site, bin) pairs with zero support among the bins starting before horizon."""
        k = max(1, self.needed_bins(horizon))
        rows, cols = np.nonzero(self.support[:, :k] == 0)
        return [(self.sites[r], int(c)) for r, c in zip(rows, cols)]

    def supported_horizon(self):
        """Start of the first bin where some boundary site has no support."""
        empty = np.flatnonzero((self.support == 0).any(axis=0))
        return float(self.edges[empty[0]]) if empty.size else float(self.edges[-1])

    def merge(self, other):
        if not np.array_equal(self.edges, other.edges):
            raise ValueError("rate tables with different bins cannot be merged")
        return RateTable(self.N, self.j, self.edges, self.sites, self.support + other.support,
                         self.d_sum + other.d_sum, self.a_sum + other.a_sum, self.low_sum + other.low_sum)

    def coarsen(self, factor):
        """The same sums re-binned into groups of factor consecutive bins (the tail group may be shorter)."""
        factor = int(factor)
        if factor < 1:
            raise ValueError("factor must be >= 1")
        starts = np.arange(0, self.n_bins, factor)
        edges = np.append(self.edges[starts], self.edges[-1])

        def fold(a):
            return np.add.reduceat(a, starts, axis=1)

        return RateTable(self.N, self.j, edges, self.sites, fold(self.support), fold(self.d_sum),
                         fold(self.a_sum), fold(self.low_sum), self.extinction_times)

    def to_rows(self):
        d = self.d_rates()
        a = self.a_rates()
        rows = []
        for k in range(self.n_bins):
            lo, hi = float(self.edges[k]), float(self.edges[k + 1])
            for r, x in enumerate(self.sites):
                rows.append((lo, hi, x, "d", float(d[r, k]), int(self.support[r, k])))
                if abs(x) == self.N:
                    rows.append((lo, hi, x, "a", float(a[r, k]), int(self.support[r, k])))
        return rows


def _rate_replica(params, eta_star, policy, edges, horizon, rng):
    N = params.N
    sites = boundary_sites(N)
    row_of = {x: r for r, x in enumerate(sites)}
    midpoints = 0.5 * (edges[:-1] + edges[1:])
    shape = (len(sites), len(midpoints))
    support = np.zeros(shape, dtype=np.int64)
    d_sum = np.zeros(shape)
    a_sum = np.zeros(shape)
    low_sum = np.zeros(shape)

    sim = CoupledSimulator(params, eta_star, rng, policy=policy)
    for k, t in enumerate(midpoints.tolist()):
        if t > horizon or not sim.advance(t, stop_on_tag_death=True):
            break
        z = sim.tagged_site
        r = row_of.get(z)
        if r is None:
            continue
        d, a, low = environment(sim.states, z, N)
        support[r, k] += 1
        d_sum[r, k] += d
        a_sum[r, k] += a
        low_sum[r, k] += low
    if sim.time < horizon:
        sim.advance(horizon, stop_on_tag_death=True)
    return support, d_sum, a_sum, low_sum, sim.tag_death


def estimate_rates(params, z0, eta_star, time_bins, replicas, rng, workers=1, support_floor=None):
    """
    Per-bin conditional rates from independent coupled replicas started at
    (z0, eta_star). The tagged extinction times of the same replicas are kept
    on the table.
    """
    if params.model_kind is not ModelKind.CURRENT:
        raise WrongModel("the auxiliary walk rates are defined for the current-reservoir coupling")
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    edges = np.asarray(time_bins, dtype=float)
    if edges.ndim != 1 or len(edges) < 2 or np.any(np.diff(edges) <= 0):
        raise ValueError("time_bins must be at least two ascending edges")
    eta_star = coerce_initial(eta_star, params.N, coupled=True)
    policy = as_policy(z0)
    horizon = float(edges[-1])
    logger.info("estimating rates: N=%d j=%s z0=%s bins=%d replicas=%d", params.N, params.j, policy,
                len(edges) - 1, replicas)

    results = run_replicas(partial(_rate_replica, params, eta_star, policy, edges, horizon),
                           rng, replicas, workers=workers, desc="rates")
    table = RateTable.empty(params.N, params.j, edges)
    for support, d_sum, a_sum, low_sum, _ in results:
        table = table.merge(RateTable(params.N, params.j, edges, table.sites, support, d_sum, a_sum, low_sum))
    table.extinction_times = np.array([r[4] for r in results], dtype=float)

    violations = table.lower_bound_violations()
    if violations:
        logger.warning("death rate below its lower bound in %d cells, first at (site, bin) %s",
                       len(violations), violations[0])

    floor = config.THRESHOLDS.support_floor if support_floor is None else support_floor
    thin = np.argwhere(table.support < floor)
    if thin.size:
        first = thin[np.argmin(thin[:, 1])]
        warn_insufficient_support(
            f"{len(thin)} (site, bin) cells below {floor} samples; first at site "
            f"{table.sites[first[0]]} bin [{edges[first[1]]}, {edges[first[1] + 1]})")
    return table


@dataclass
class ResolutionReport:
    factor: int
    max_abs_diff: float
    max_z: float
    n_compared: int

    def to_text(self):
        return (f"factor={self.factor} max_abs_diff={self.max_abs_diff:.6g} "
                f"max_z={self.max_z:.3f} compared={self.n_compared}")


def bin_resolution_check(table, factor=2):
    """
    Compares each fine-bin death rate with the coarse-bin rate containing it,
    in units of the fine estimate's binomial standard error.
    """
    coarse = table.coarsen(factor)
    fine_d = table.d_rates()
    coarse_d = coarse.d_rates()
    diffs = []
    zs = []
    for k in range(table.n_bins):
        kc = k // factor
        for r in range(len(table.sites)):
            n = table.support[r, k]
            if n == 0 or coarse.support[r, kc] == 0:
                continue
            diff = abs(fine_d[r, k] - coarse_d[r, kc])
            q = min(1.0, table.d_sum[r, k] / n)
            se = table.rate * math.sqrt(max(q * (1 - q), 1.0 / n) / n)
            diffs.append(diff)
            zs.append(diff / se)
    if not diffs:
        return ResolutionReport(factor, math.nan, math.nan, 0)
    return ResolutionReport(factor, float(max(diffs)), float(max(zs)), len(diffs))
