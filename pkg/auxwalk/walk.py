"""
The auxiliary time-inhomogeneous walk and the comparison of its extinction
law with the tagged discrepancy's.

The walk jumps at rate 1/2 to each neighbour (jumps off -N..N suppressed),
jumps inward from +-N at rate a(+-N, t) and dies at rate d(z, t). Rates are
constant on each bin of the rate table; within a bin events are proposed at
the bin's dominating rate and thinned.
"""
import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.stats

import config
from auxwalk.rates import as_policy, default_time_bins, estimate_rates
from estimators.survival import SurvivalCurve
from harris.coupled import default_grid, survival_samples
from lattice.configuration import SiteState, coerce_initial
from utils import MissingRates

logger = logging.getLogger(__name__)

ALIVE = math.inf

CURVE_HEADER = ("t", "p_tagged", "p_aux")


def _full_rates(table):
    """(bins, 2N+1) death and extra-jump rates; NaN where a boundary cell is missing."""
    size = 2 * table.N + 1
    d = np.zeros((table.n_bins, size))
    a = np.zeros((table.n_bins, size))
    d_rates = table.d_rates()
    a_rates = table.a_rates()
    for r, x in enumerate(table.sites):
        d[:, x + table.N] = d_rates[r]
        a[:, x + table.N] = a_rates[r]
    return d, a


def run_walkers(table, starts, horizon, rng):
    """
    Extinction times of independent walkers started at the given sites
    (ALIVE for walkers surviving to horizon).
    """
    if not table.covers(horizon):
        raise MissingRates(f"rate table covers [{table.edges[0]}, {table.edges[-1]}], horizon is {horizon}")
    N = table.N
    d, a = _full_rates(table)
    with np.errstate(invalid="ignore"):
        dominating = 1.0 + np.nanmax(np.nan_to_num(a + d, nan=0.0), axis=1)
    edges = table.edges

    pos = np.asarray(starts, dtype=np.int64).copy()
    t = np.zeros(len(pos))
    death = np.full(len(pos), ALIVE)
    active = np.full(len(pos), horizon > 0)
    while active.any():
        idx = np.flatnonzero(active)
        k = np.searchsorted(edges, t[idx], side="right") - 1
        lam = dominating[k]
        t_next = t[idx] + rng.exponential(1.0, size=idx.size) / lam
        bin_end = edges[k + 1]
        crossed = t_next >= bin_end
        # a proposal beyond the bin restarts at the bin edge
        t[idx] = np.where(crossed, bin_end, t_next)
        fires = ~crossed & (t_next < horizon)

        hit = idx[fires]
        if hit.size:
            kh = k[fires]
            col = pos[hit] + N
            dh = d[kh, col]
            ah = a[kh, col]
            if np.isnan(dh).any() or np.isnan(ah).any():
                bad = int(np.flatnonzero(np.isnan(dh) | np.isnan(ah))[0])
                raise MissingRates(f"no rate estimate at site {pos[hit][bad]} in bin "
                                   f"[{edges[kh[bad]]}, {edges[kh[bad] + 1]})")
            u = rng.uniform(0.0, lam[fires])
            left = u < 0.5
            right = (u >= 0.5) & (u < 1.0)
            extra = (u >= 1.0) & (u < 1.0 + ah)
            dies = (u >= 1.0 + ah) & (u < 1.0 + ah + dh)
            step = np.where(left, -1, 0) + np.where(right, 1, 0) - np.where(extra, np.sign(pos[hit]), 0)
            pos[hit] = np.clip(pos[hit] + step, -N, N)
            death[hit[dies]] = t[hit[dies]]
            active[hit[dies]] = False
        active[idx] &= t[idx] < horizon
    return death


def evolve_aux(rate_table, z0, horizon, rng):
    """Extinction time of one auxiliary walk started at z0, or ALIVE at horizon."""
    return float(run_walkers(rate_table, [int(z0)], horizon, rng)[0])


def aux_starts(N, policy, eta_star, replicas, rng):
    """Start sites drawn like the tag's; a start on a non-discrepancy site is dead at time 0."""
    if policy.is_uniform:
        starts = rng.integers(-N, N + 1, size=replicas)
    else:
        starts = np.full(replicas, policy.site)
    dead = np.array([eta_star[int(x)] is not SiteState.NE for x in starts], dtype=bool)
    return starts, dead


def sample_aux_extinctions(table, policy, eta_star, horizon, replicas, rng):
    starts, dead = aux_starts(table.N, policy, eta_star, replicas, rng)
    times = run_walkers(table, starts, horizon, rng)
    times[dead] = 0.0
    return times


def ks_statistic(a, b):
    a = np.sort(a)
    b = np.sort(b)
    pooled = np.concatenate([a, b])
    cdf_a = np.searchsorted(a, pooled, side="right") / len(a)
    cdf_b = np.searchsorted(b, pooled, side="right") / len(b)
    return float(np.max(np.abs(cdf_a - cdf_b)))


def bootstrap_ks_pvalue(a, b, statistic, rng, rounds=None):
    """Share of pooled-resample KS statistics at least as large as the observed one."""
    rounds = config.BOOTSTRAP_ROUNDS if rounds is None else rounds
    pooled = np.concatenate([a, b])
    exceed = 0
    for _ in range(rounds):
        xa = rng.choice(pooled, size=len(a))
        xb = rng.choice(pooled, size=len(b))
        exceed += ks_statistic(xa, xb) >= statistic - 1e-12
    return (exceed + 1) / (rounds + 1)


@dataclass
class CompareReport:
    N: int
    j: float
    horizon: float
    effective_horizon: float
    tagged: SurvivalCurve
    aux: SurvivalCurve
    ks_statistic: float
    ks_pvalue: float
    bootstrap_pvalue: float
    level: float

    @property
    def agree(self):
        return self.bootstrap_pvalue >= self.level

    def curve_rows(self):
        return [(float(t), float(p), float(q)) for t, p, q in zip(self.tagged.grid, self.tagged.p_hat, self.aux.p_hat)]

    def to_text(self):
        verdict = "agree" if self.agree else "disagree"
        return "\n".join([
            f"N={self.N} j={self.j} horizon={self.horizon} effective_horizon={self.effective_horizon}",
            f"replicas tagged={self.tagged.n_replicas} aux={self.aux.n_replicas}",
            f"ks_statistic={self.ks_statistic:.6g} ks_pvalue={self.ks_pvalue:.6g} "
            f"bootstrap_pvalue={self.bootstrap_pvalue:.6g} level={self.level}",
            f"verdict={verdict}",
        ]) + "\n"


def compare_extinction(params, z0, eta_star, horizon, replicas, rng, time_bins=None, workers=1, level=None):
    """
    Tagged-discrepancy extinction times against auxiliary-walk extinction
    times driven by rates estimated from a separate set of tagged replicas.

    Both samples are censored at the effective horizon: the requested horizon,
    cut back to the first bin in which some boundary site has no rate estimate.
    """
    level = config.THRESHOLDS.ks_level if level is None else level
    eta_star = coerce_initial(eta_star, params.N, coupled=True)
    policy = as_policy(z0)
    rate_rng, tag_rng, aux_rng, boot_rng = rng.spawn(4)

    if horizon <= 0:
        tagged = SurvivalCurve.from_extinction_times(np.full(replicas, ALIVE), [0.0], horizon=0.0)
        aux = SurvivalCurve.from_extinction_times(np.full(replicas, ALIVE), [0.0], horizon=0.0)
        return CompareReport(params.N, params.j, 0.0, 0.0, tagged, aux, 0.0, 1.0, 1.0, level)

    bins = default_time_bins(params.N, horizon) if time_bins is None else np.asarray(time_bins, dtype=float)
    table = estimate_rates(params, policy, eta_star, bins, replicas, rate_rng, workers=workers)
    effective = min(float(horizon), table.supported_horizon())
    if effective < horizon:
        logger.warning("comparison horizon cut from %s to %s where rate estimates run out", horizon, effective)

    # tagged sample drawn apart from the rate replicas
    tagged_run = survival_samples(params, policy, effective, replicas, tag_rng, initial=eta_star,
                                  track_total=False, workers=workers)
    tagged_times = np.minimum(tagged_run.extinction_times, effective)
    aux_times = np.minimum(sample_aux_extinctions(table, policy, eta_star, effective, replicas, aux_rng), effective)
    statistic = ks_statistic(tagged_times, aux_times)
    pvalue = float(scipy.stats.ks_2samp(tagged_times, aux_times).pvalue)
    boot = bootstrap_ks_pvalue(tagged_times, aux_times, statistic, boot_rng)

    grid = default_grid(effective)
    tagged = SurvivalCurve.from_extinction_times(
        np.where(tagged_times >= effective, ALIVE, tagged_times), grid, horizon=effective)
    aux = SurvivalCurve.from_extinction_times(
        np.where(aux_times >= effective, ALIVE, aux_times), grid, horizon=effective)
    report = CompareReport(params.N, params.j, float(horizon), effective, tagged, aux, statistic, pvalue, boot, level)
    logger.info("compare: KS=%.4g p=%.4g bootstrap p=%.4g -> %s", statistic, pvalue, boot,
                "agree" if report.agree else "disagree")
    return report
