"""
Exact event-driven simulation of a single copy.

All clocks of `clock_table` have state-independent rates, so the total rate
is constant: waiting times are Exp(R) and the clock that rings is drawn with
probability rate/R. A clock whose guard fails is a wasted ring. Both draws
are taken in batches from the generator, which keeps runs deterministic for a
given seed.
"""
import logging
import math
from dataclasses import dataclass, field
from functools import partial
from typing import List, Optional

import numpy as np

import config
from dynamics.events import (
    CURRENT_BIRTH,
    CURRENT_DEATH,
    DENSITY_SET,
    affected_indices,
    clock_table,
    compile_event,
    fire_code,
)
from lattice.configuration import Configuration, coerce_initial
from workers.replica_pool import run_replicas, seed_record

logger = logging.getLogger(__name__)


@dataclass
class Trajectory:
    times: np.ndarray
    states: List[Configuration]
    seed: Optional[str] = None

    def to_rows(self):
        return [(float(t), s.to_string()) for t, s in zip(self.times, self.states)]


@dataclass
class StationaryProfile:
    sites: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    n_samples: int
    current: float = math.nan
    current_stderr: float = math.nan
    burn_in: float = 0.0
    sample_horizon: float = 0.0

    def to_rows(self):
        return [(int(x), float(m), float(s), self.n_samples) for x, m, s in zip(self.sites, self.mean, self.stderr)]


@dataclass
class SingleCopySimulator:
    """Holds one running copy; `advance` moves it forward to a target time."""
    params: object
    occupancy: list
    rng: np.random.Generator
    boundaries: bool = True
    track_occupation: bool = False
    batch: int = config.EVENT_BATCH
    time: float = 0.0
    fired: list = field(default_factory=list)

    def __post_init__(self):
        N = self.params.N
        self.occupancy = list(self.occupancy)
        self.table = clock_table(self.params, self.boundaries)
        self._codes = [compile_event(event, N) for event, _ in self.table]
        rates = np.array([rate for _, rate in self.table], dtype=float)
        self.total_rate = float(rates.sum())
        self._probs = rates / self.total_rate
        self.fired = [0] * len(self.table)
        self._waits = []
        self._picks = []
        self._pos = 0
        self._pending = None
        self._acc = [0.0] * len(self.occupancy)
        self._last = [self.time] * len(self.occupancy)

    def _draw(self):
        self._waits = self.rng.exponential(1.0 / self.total_rate, size=self.batch).tolist()
        self._picks = self.rng.choice(len(self._codes), size=self.batch, p=self._probs).tolist()
        self._pos = 0

    def _next_event(self):
        if self._pos >= len(self._waits):
            self._draw()
        wait = self._waits[self._pos]
        pick = self._picks[self._pos]
        self._pos += 1
        return self.time + wait, pick

    def advance(self, until, on_change=None):
        """Runs every event with time <= until; the clock is left at `until`."""
        occ = self.occupancy
        codes = self._codes
        while True:
            if self._pending is None:
                self._pending = self._next_event()
            t, k = self._pending
            if t > until:
                self.time = until
                return
            self._pending = None
            self.time = t
            code, i, value = codes[k]
            if self.track_occupation:
                for idx in affected_indices(code, i):
                    self._acc[idx] += occ[idx] * (t - self._last[idx])
                    self._last[idx] = t
            if fire_code(occ, code, i, value):
                self.fired[k] += 1
                if on_change is not None:
                    on_change(t)

    def reset_accumulators(self):
        self._acc = [0.0] * len(self.occupancy)
        self._last = [self.time] * len(self.occupancy)
        self.fired = [0] * len(self.table)

    def occupation_integral(self):
        """Integral of each site's occupation since the last reset, up to self.time."""
        return [a + o * (self.time - last) for a, o, last in zip(self._acc, self.occupancy, self._last)]

    def boundary_flux(self):
        """(net particles entering at the right, net particles leaving at the left) since the last reset."""
        inflow = 0
        outflow = 0
        for (event, _), count in zip(self.table, self.fired):
            if event.tag == CURRENT_BIRTH:
                inflow += count
            elif event.tag == CURRENT_DEATH:
                outflow += count
            elif event.tag == DENSITY_SET:
                # every counted ring flipped the site
                sign = 1 if event.value == 1 else -1
                if event.site > 0:
                    inflow += sign * count
                else:
                    outflow -= sign * count
        return inflow, outflow

    def configuration(self):
        return Configuration(tuple(self.occupancy))


def evolve(c0, horizon, params, rng, sample_times=None, boundaries=True):
    """
    Simulates the copy started from c0 up to time horizon.

    Without sample_times every jump of the configuration is recorded;
    otherwise the configuration is recorded at each requested time.
    """
    c0 = coerce_initial(c0, params.N)
    if horizon < 0:
        raise ValueError(f"horizon must be >= 0, got {horizon}")
    seed = seed_record(rng)
    if horizon == 0:
        return Trajectory(np.array([0.0]), [c0], seed)

    sim = SingleCopySimulator(params, c0.occupancy, rng, boundaries=boundaries)
    if sample_times is None:
        times = [0.0]
        states = [c0]

        def record(t):
            times.append(t)
            states.append(sim.configuration())

        sim.advance(horizon, on_change=record)
        return Trajectory(np.array(times), states, seed)

    grid = np.asarray(sample_times, dtype=float)
    if np.any(np.diff(grid) <= 0) or (grid.size and (grid[0] < 0 or grid[-1] > horizon)):
        raise ValueError("sample_times must be strictly increasing within [0, horizon]")
    states = []
    for t in grid.tolist():
        sim.advance(t)
        states.append(sim.configuration())
    return Trajectory(grid, states, seed)


def _marginal_replica(params, initial, grid, boundaries, rng):
    sim = SingleCopySimulator(params, initial.occupancy, rng, boundaries=boundaries)
    out = np.empty((len(grid), params.size), dtype=np.int8)
    for row, t in enumerate(grid):
        sim.advance(t)
        out[row] = sim.occupancy
    return out


def estimate_marginals(params, times, replicas, rng, initial=None, boundaries=True, workers=1):
    """
    Monte Carlo site-occupation probabilities at the given times.

    Returns (p_hat, stderr), each of shape (len(times), 2N+1), with binomial
    standard errors.
    """
    initial = coerce_initial(initial, params.N)
    grid = [float(t) for t in times]
    results = run_replicas(partial(_marginal_replica, params, initial, grid, boundaries),
                           rng, replicas, workers=workers, desc="marginals")
    p_hat = np.mean(np.stack(results), axis=0)
    stderr = np.sqrt(p_hat * (1.0 - p_hat) / replicas)
    return p_hat, stderr


def _profile_replica(params, initial, burn_in, sample_horizon, rng):
    sim = SingleCopySimulator(params, initial.occupancy, rng, track_occupation=True)
    sim.advance(burn_in)
    sim.reset_accumulators()
    sim.advance(burn_in + sample_horizon)
    occupation = np.array(sim.occupation_integral()) / sample_horizon
    inflow, outflow = sim.boundary_flux()
    current = 0.5 * (inflow + outflow) / sample_horizon
    return occupation, current


def estimate_stationary_profile(params, burn_in, sample_horizon, replicas, rng, initial=None, workers=1):
    """
    Time-and-replica averaged occupation per site after a burn-in.

    burn_in=None selects BURN_IN_FACTOR * N^2. Also estimates the stationary
    boundary current, the mean of the net inflow at +N and the net outflow
    at -N per unit time.
    """
    if burn_in is None:
        burn_in = config.BURN_IN_FACTOR * params.N ** 2
    if burn_in <= 0 or sample_horizon <= 0:
        raise ValueError("burn_in and sample_horizon must be > 0")
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    initial = coerce_initial(initial, params.N)
    logger.info("stationary profile: N=%d burn_in=%s horizon=%s replicas=%d",
                params.N, burn_in, sample_horizon, replicas)

    results = run_replicas(partial(_profile_replica, params, initial, burn_in, sample_horizon),
                           rng, replicas, workers=workers, desc="stationary")
    occupation = np.stack([r[0] for r in results])
    currents = np.array([r[1] for r in results])
    if replicas > 1:
        stderr = occupation.std(axis=0, ddof=1) / math.sqrt(replicas)
        current_stderr = float(currents.std(ddof=1) / math.sqrt(replicas))
    else:
        stderr = np.full(params.size, math.nan)
        current_stderr = math.nan
    return StationaryProfile(
        sites=np.arange(-params.N, params.N + 1),
        mean=occupation.mean(axis=0),
        stderr=stderr,
        n_samples=replicas,
        current=float(currents.mean()),
        current_stderr=current_stderr,
        burn_in=float(burn_in),
        sample_horizon=float(sample_horizon),
    )
