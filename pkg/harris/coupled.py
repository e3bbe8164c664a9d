"""
The coupled process on ordered pairs, realized from Poisson marks.

Site states are ZERO (0-particle), ONE (1-particle) and NE (discrepancy).
On the right window a boundary mark fills towards ONE; the left window is
its mirror image with the roles of ONE and ZERO exchanged. Discrepancies
carry labels 1..2N+1 that follow them through stirring and A-moves and die
with them.
"""
import logging
import math
from dataclasses import dataclass
from functools import partial
from typing import Dict, Optional

import numpy as np

import config
from estimators.survival import SurvivalCurve
from harris.marks import A, B, D, KILL, STIR, coupled_clock_table, iter_mark_windows
from lattice.configuration import CoupledConfiguration, ModelKind, SiteState, coerce_initial
from utils import InvalidParams, WrongModel
from workers.replica_pool import run_replicas

logger = logging.getLogger(__name__)

DEAD = None

ZERO = int(SiteState.ZERO)
ONE = int(SiteState.ONE)
NE = int(SiteState.NE)

# compiled clock codes
C_STIR, C_A, C_D_EDGE, C_D_INNER, C_B_EDGE, C_B_INNER, C_KILL = range(7)

# label effects returned by fire_coupled
NOOP, CHANGED, SWAP, MOVE, KILL_EDGE, KILL_INNER = range(6)


@dataclass(frozen=True)
class DiscrepancyLabels:
    positions: Dict[int, Optional[int]]

    def live_sites(self):
        return sorted(x for x in self.positions.values() if x is not DEAD)

    def alive(self, label):
        return self.positions.get(label) is not DEAD

    def to_string(self):
        return " ".join(f"{label}@{x:+d}" for label, x in sorted(self.positions.items()) if x is not DEAD)


@dataclass
class CoupledSnapshot:
    t: float
    configuration: CoupledConfiguration
    labels: DiscrepancyLabels

    def to_row(self):
        return (self.t, self.configuration.to_string(), self.labels.to_string())


@dataclass(frozen=True)
class StartPolicy:
    """Where the tagged discrepancy z1 starts: uniformly over sites, or at a fixed site."""
    site: Optional[int] = None

    @classmethod
    def uniform(cls):
        return cls(None)

    @classmethod
    def fixed(cls, x):
        return cls(int(x))

    @property
    def is_uniform(self):
        return self.site is None

    def __str__(self):
        return "uniform" if self.is_uniform else f"fixed({self.site:+d})"


def compile_clock(clock, N):
    """(code, edge-or-bond index, inner index, fill state, empty state, value)."""
    if clock.kind == STIR:
        return (C_STIR, clock.site + N, 0, 0, 0, 0)
    if clock.side > 0:
        edge, inner, fill, empty = 2 * N, 2 * N - 1, ONE, ZERO
    else:
        edge, inner, fill, empty = 0, 1, ZERO, ONE
    if clock.kind == KILL:
        return (C_KILL, edge, inner, fill, empty, clock.value)
    at_edge = clock.site + N == edge
    if clock.kind == A:
        code = C_A
    elif clock.kind == D:
        code = C_D_EDGE if at_edge else C_D_INNER
    else:
        code = C_B_EDGE if at_edge else C_B_INNER
    return (code, edge, inner, fill, empty, 0)


def fire_coupled(s, code, i, inner, fill, empty, value):
    """
    Applies one compiled mark to the state list s in place.

    Returns the label effect; marks whose guard fails return NOOP.
    """
    if code == C_STIR:
        a = s[i]
        b = s[i + 1]
        s[i] = b
        s[i + 1] = a
        return SWAP if (a == NE or b == NE) else (CHANGED if a != b else NOOP)
    if code == C_A:
        if s[i] == NE and s[inner] == empty:
            s[i] = fill
            s[inner] = NE
            return MOVE
        return NOOP
    if code == C_D_EDGE:
        if s[i] == NE and s[inner] != empty:
            s[i] = fill
            return KILL_EDGE
        return NOOP
    if code == C_D_INNER:
        if s[inner] == NE and s[i] == fill:
            s[inner] = fill
            return KILL_INNER
        return NOOP
    if code == C_B_EDGE:
        if s[i] == empty:
            s[i] = fill
            return CHANGED
        return NOOP
    if code == C_B_INNER:
        if s[i] == fill and s[inner] == empty:
            s[inner] = fill
            return CHANGED
        return NOOP
    was = s[i]
    s[i] = ONE if value else ZERO
    if was == NE:
        return KILL_EDGE
    return CHANGED if was != s[i] else NOOP


def _move_labels(at, pos, effect, i, inner):
    if effect == SWAP:
        a = at[i]
        b = at[i + 1]
        at[i] = b
        at[i + 1] = a
        if a:
            pos[a] = i + 1
        if b:
            pos[b] = i
    elif effect == MOVE:
        # the A guard needs a 0-/1-particle at the inner site, so no label sits there
        assert at[inner] == 0, "A-mark moved a discrepancy onto a labelled site"
        label = at[i]
        at[i] = 0
        at[inner] = label
        if label:
            pos[label] = inner
    elif effect == KILL_EDGE or effect == KILL_INNER:
        site = i if effect == KILL_EDGE else inner
        label = at[site]
        at[site] = 0
        if label:
            pos[label] = -1


def _check_model(clock, params):
    if params is None:
        return
    if clock.kind == KILL and params.model_kind is not ModelKind.DENSITY:
        raise WrongModel("kill marks belong to the density-reservoir coupling")
    if clock.kind in (A, B, D) and params.model_kind is not ModelKind.CURRENT:
        raise WrongModel(f"{clock.kind}-marks belong to the current-reservoir coupling")


def labels_from_sites(site_of_label, N):
    """DiscrepancyLabels from a label -> 0-based index list (index 0 unused, -1 dead)."""
    return DiscrepancyLabels({label: (DEAD if idx < 0 else idx - N)
                              for label, idx in enumerate(site_of_label) if label > 0})


def _label_arrays(c, labels):
    size = len(c)
    N = c.N
    at = [0] * size
    pos = [-1] * (size + 1)
    for label, x in labels.positions.items():
        if x is not DEAD:
            at[x + N] = label
            pos[label] = x + N
    return at, pos


def apply_mark(c, labels, mark, params=None):
    """
    Applies a single mark (a ClockId, or a (time, ClockId) pair) to a coupled
    configuration and its labels; returns the updated pair.
    """
    clock = mark[1] if isinstance(mark, tuple) else mark
    _check_model(clock, params)
    N = c.N
    s = [int(v) for v in c.states]
    at, pos = _label_arrays(c, labels)
    code = compile_clock(clock, N)
    effect = fire_coupled(s, *code)
    _move_labels(at, pos, effect, code[1], code[2])
    return CoupledConfiguration(tuple(s)), labels_from_sites(pos, N)


def initial_labels(c, rng, policy=None):
    """
    Uniformly random labelling of the sites by 1..2N+1; labels landing on a
    non-discrepancy site start dead. With a fixed policy, label 1 is put at
    the policy's site and the rest are permuted over the other sites.
    """
    size = len(c)
    N = c.N
    if policy is None or policy.is_uniform:
        order = (rng.permutation(size) + 1).tolist()
    else:
        start = policy.site + N
        if c.states[start] is not SiteState.NE:
            raise InvalidParams(f"tagged start {policy.site} is not a discrepancy in {c.to_string()}")
        rest = (rng.permutation(size - 1) + 2).tolist()
        order = rest[:start] + [1] + rest[start:]
    at = [0] * size
    pos = [-1] * (size + 1)
    for idx, label in enumerate(order):
        if c.states[idx] is SiteState.NE:
            at[idx] = label
            pos[label] = idx
    return at, pos


class CoupledSimulator:
    """
    One running coupled replica with its labels. Marks are drawn window by
    window from the mark generator as `advance` needs them.
    """

    def __init__(self, params, c0, rng, boundaries=True, policy=None, window=None, check_invariants=False):
        self.params = params
        self.N = params.N
        label_rng, mark_rng = rng.spawn(2)
        self.states = [int(v) for v in c0.states]
        self.at, self.pos = initial_labels(c0, label_rng, policy)
        self.table = coupled_clock_table(params, boundaries)
        self._codes = [compile_clock(clock, self.N) for clock, _ in self.table]
        self._windows = iter_mark_windows(params, math.inf, mark_rng, window=window, boundaries=boundaries)
        self._times = []
        self._clocks = []
        self._k = 0
        self.time = 0.0
        self.n_ne = sum(1 for v in self.states if v == NE)
        # a tag placed on a non-discrepancy site is dead from the start
        self.tag_death = math.inf if self.pos[1] >= 0 else 0.0
        self.check_invariants = check_invariants

    def _refill(self):
        stream = next(self._windows)
        self._times = stream.times.tolist()
        self._clocks = stream.clocks.tolist()
        self._k = 0

    def advance(self, until, before_mark=None, stop_on_tag_death=False):
        """
        Applies every mark with time <= until. Returns False if it stopped early
        because the tagged discrepancy died and stop_on_tag_death was set.
        """
        s = self.states
        at = self.at
        pos = self.pos
        codes = self._codes
        if stop_on_tag_death and self.tag_death < math.inf:
            return False
        while True:
            if self._k >= len(self._times):
                self._refill()
                continue
            t = self._times[self._k]
            if t > until:
                self.time = until
                return True
            self._k += 1
            if before_mark is not None:
                before_mark(self, t)
            self.time = t
            code = codes[self._clocks[self._k - 1]]
            effect = fire_coupled(s, *code)
            if effect >= SWAP:
                _move_labels(at, pos, effect, code[1], code[2])
                if effect >= KILL_EDGE:
                    self.n_ne -= 1
                    if pos[1] < 0 and self.tag_death == math.inf:
                        self.tag_death = t
            if self.check_invariants:
                self._verify()
            if stop_on_tag_death and self.tag_death < math.inf:
                return False

    def _verify(self):
        live = sorted(p for p in self.pos[1:] if p >= 0)
        ne = [i for i, v in enumerate(self.states) if v == NE]
        if live != ne:
            raise AssertionError(f"labels at {live} but discrepancies at {ne} (t={self.time})")
        if len(ne) != self.n_ne:
            raise AssertionError("discrepancy counter out of sync")

    @property
    def tagged_site(self):
        """Signed position of label 1, or DEAD."""
        return DEAD if self.pos[1] < 0 else self.pos[1] - self.N

    def configuration(self):
        return CoupledConfiguration(tuple(self.states))

    def labels(self):
        return labels_from_sites(self.pos, self.N)


def evolve_coupled(c0, horizon, params, rng, sample_times, boundaries=True, policy=None, check_invariants=False):
    """Runs the coupled process to horizon and returns snapshots at sample_times."""
    c0 = coerce_initial(c0, params.N, coupled=True)
    grid = [float(t) for t in sample_times]
    if any(b <= a for a, b in zip(grid, grid[1:])) or (grid and (grid[0] < 0 or grid[-1] > horizon)):
        raise ValueError("sample_times must be ascending within [0, horizon]")
    sim = CoupledSimulator(params, c0, rng, boundaries=boundaries, policy=policy, check_invariants=check_invariants)
    snapshots = []
    for t in grid:
        sim.advance(t)
        snapshots.append(CoupledSnapshot(t, sim.configuration(), sim.labels()))
    return snapshots


def default_grid(horizon, points=None):
    points = points or config.GRID_POINTS
    if horizon <= 0:
        return np.array([0.0])
    return np.linspace(0.0, horizon, points)


def _survival_replica(params, initial, policy, grid, track_total, boundaries, rng):
    sim = CoupledSimulator(params, initial, rng, boundaries=boundaries, policy=policy)
    totals = np.zeros(len(grid), dtype=np.int32) if track_total else None
    for row, t in enumerate(grid):
        running = sim.advance(t, stop_on_tag_death=not track_total)
        if not running:
            break
        if track_total:
            totals[row] = sim.n_ne
    return sim.tag_death, totals


def survival_samples(params, policy, horizon, replicas, rng, grid=None, initial=None,
                     track_total=True, boundaries=True, workers=1):
    """
    Estimates P[z1(t) alive] on a time grid from independent coupled replicas.

    With track_total the mean discrepancy count over the same runs is also
    recorded; otherwise each replica stops as soon as z1 dies.
    """
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    if policy is None:
        policy = StartPolicy.uniform()
    initial = coerce_initial(initial, params.N, coupled=True)
    grid = default_grid(horizon) if grid is None else np.asarray(grid, dtype=float)
    logger.info("survival: %s N=%d policy=%s horizon=%s replicas=%d",
                params.model_kind.value, params.N, policy, horizon, replicas)

    results = run_replicas(
        partial(_survival_replica, params, initial, policy, grid.tolist(), track_total, boundaries),
        rng, replicas, workers=workers, desc="survival")
    deaths = np.array([r[0] for r in results], dtype=float)
    curve = SurvivalCurve.from_extinction_times(deaths, grid, horizon=horizon)
    if track_total:
        fractions = np.stack([r[1] for r in results]) / params.size
        curve.mean_discrepancy_fraction = fractions.mean(axis=0)
        curve.fraction_stderr = (fractions.std(axis=0, ddof=1) / math.sqrt(replicas)
                                 if replicas > 1 else np.full(len(grid), math.nan))
    return curve


def _state_replica(params, initial, grid, boundaries, rng):
    sim = CoupledSimulator(params, initial, rng, boundaries=boundaries)
    out = np.empty((len(grid), params.size), dtype=np.int8)
    for row, t in enumerate(grid):
        sim.advance(t)
        out[row] = sim.states
    return out


def _coupled_states(params, times, replicas, rng, initial, boundaries, workers, desc):
    initial = coerce_initial(initial, params.N, coupled=True)
    if replicas < 1:
        raise ValueError("replicas must be >= 1")
    results = run_replicas(partial(_state_replica, params, initial, [float(t) for t in times], boundaries),
                           rng, replicas, workers=workers, desc=desc)
    return np.stack(results)


def estimate_coupled_marginals(params, times, replicas, rng, initial=None, boundaries=True, workers=1):
    """
    Site-occupation probabilities of both copies of the coupled process.

    Returns (p_upper, se_upper, p_lower, se_lower), shape (len(times), 2N+1).
    """
    states = _coupled_states(params, times, replicas, rng, initial, boundaries, workers, "coupled marginals")
    p_upper = np.mean(states != ZERO, axis=0)
    p_lower = np.mean(states == ONE, axis=0)
    se_upper = np.sqrt(p_upper * (1 - p_upper) / replicas)
    se_lower = np.sqrt(p_lower * (1 - p_lower) / replicas)
    return p_upper, se_upper, p_lower, se_lower


def estimate_discrepancy_profile(params, times, replicas, rng, initial=None, workers=1):
    """P[site x holds a discrepancy at t] with binomial errors, shape (len(times), 2N+1)."""
    states = _coupled_states(params, times, replicas, rng, initial, True, workers, "discrepancy profile")
    p = np.mean(states == NE, axis=0)
    return p, np.sqrt(p * (1 - p) / replicas)


def _hazard_replica(params, horizon, rng):
    sim = CoupledSimulator(params, CoupledConfiguration.all_discrepancies(params.N), rng)
    edges = (0, 2 * params.N)
    clock = {"exposure": 0.0, "last": 0.0}

    def before_mark(s, t):
        occupied = sum(1 for i in edges if s.states[i] == NE)
        clock["exposure"] += occupied * (t - clock["last"])
        clock["last"] = t

    sim.advance(horizon, before_mark=before_mark)
    before_mark(sim, horizon)
    # every death in the density coupling is a kill mark at an edge
    deaths = params.size - sim.n_ne
    return deaths, clock["exposure"]


def boundary_death_hazard(params, horizon, replicas, rng, workers=1):
    """
    Empirical death hazard of a discrepancy sitting at -N or N in the density
    coupling: deaths divided by accumulated boundary exposure time, with a
    Poisson standard error.
    """
    if params.model_kind is not ModelKind.DENSITY:
        raise WrongModel("the boundary kill hazard is defined for the density coupling")
    results = run_replicas(partial(_hazard_replica, params, horizon), rng, replicas,
                           workers=workers, desc="hazard")
    deaths = sum(r[0] for r in results)
    exposure = sum(r[1] for r in results)
    if exposure <= 0:
        return math.nan, math.nan
    return deaths / exposure, math.sqrt(deaths) / exposure
