"""
Exact small-N references for the Monte Carlo pipelines.

The master-equation oracle assembles the generator by firing every clock of
the simulators on every configuration, so the matrix and the simulators share
one transition code path. The Feynman-Kac helpers solve the killed
random-walk semigroup that describes a discrepancy of the density coupling.
"""
import itertools
import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse

import config
from dynamics.events import clock_table, fire
from harris.coupled import compile_clock, fire_coupled
from harris.marks import coupled_clock_table
from lattice.configuration import Configuration, CoupledConfiguration, coerce_initial, reflect_flip
from utils import StateSpaceTooLarge

logger = logging.getLogger(__name__)


def format_dense(array):
    """Plain-text dense dump: a '# rows cols' header, then one row-major line per row."""
    a = np.atleast_2d(np.asarray(array, dtype=float))
    lines = [f"# {a.shape[0]} {a.shape[1]}"]
    lines += [" ".join(repr(float(v)) for v in row) for row in a]
    return "\n".join(lines) + "\n"


def parse_dense(text):
    rows = [line for line in text.splitlines() if line.strip()]
    n_rows, n_cols = (int(v) for v in rows[0].lstrip("#").split())
    data = np.array([[float(v) for v in line.split()] for line in rows[1:]])
    return data.reshape(n_rows, n_cols)


def _smallest_positive(rates, scale):
    rates = np.sort(np.asarray(rates, dtype=float))
    positive = rates[rates > 1e-9 * max(scale, 1.0)]
    return float(positive[0]) if positive.size else math.nan


class MasterEquationOracle:
    """Dense generator of the single-copy chain (or of the coupled chain) at small N."""

    def __init__(self, params, coupled=False, max_dim=None):
        self.params = params
        self.coupled = coupled
        self.N = params.N
        size = params.size
        base = 3 if coupled else 2
        dim = base ** size
        limit = config.STATE_SPACE_GUARD if max_dim is None else max_dim
        if dim > limit:
            raise StateSpaceTooLarge(f"{dim} states for N={self.N} ({'coupled' if coupled else 'single'}) "
                                     f"exceed the guard of {limit}")
        self.states = list(itertools.product(range(base), repeat=size))
        self.index = {s: i for i, s in enumerate(self.states)}
        self.dim = dim
        self.generator = self._assemble()
        logger.info("assembled %dx%d generator for %s", dim, dim, params)

    def _transitions(self):
        N = self.N
        if self.coupled:
            for clock, rate in coupled_clock_table(self.params):
                code = compile_clock(clock, N)
                yield rate, (lambda s, code=code: fire_coupled(s, *code))
        else:
            for event, rate in clock_table(self.params):
                yield rate, (lambda s, event=event: fire(s, event, N))

    def _assemble(self):
        rows, cols, vals = [], [], []
        transitions = list(self._transitions())
        for i, state in enumerate(self.states):
            for rate, apply in transitions:
                if rate <= 0:
                    continue
                s = list(state)
                apply(s)
                target = tuple(s)
                if target != state:
                    rows.append(i)
                    cols.append(self.index[target])
                    vals.append(rate)
        off = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(self.dim, self.dim)).toarray()
        np.fill_diagonal(off, 0.0)
        return off - np.diag(off.sum(axis=1))

    def transition_rate(self, a, b):
        """Generator entry for the configurations a -> b."""
        return float(self.generator[self._state_of(a), self._state_of(b)])

    def _state_of(self, c):
        if isinstance(c, str):
            c = coerce_initial(c, self.N, coupled=self.coupled)
        if isinstance(c, CoupledConfiguration):
            key = tuple(int(v) for v in c.states)
        elif isinstance(c, Configuration):
            key = c.occupancy
        else:
            key = tuple(int(v) for v in c)
        return self.index[key]

    def point_mass(self, start):
        mu = np.zeros(self.dim)
        mu[self._state_of(start)] = 1.0
        return mu

    @cached_property
    def stationary(self):
        """Solves mu Q = 0, sum(mu) = 1 by replacing one adjoint equation with the normalization."""
        a = self.generator.T.copy()
        a[-1, :] = 1.0
        b = np.zeros(self.dim)
        b[-1] = 1.0
        mu = scipy.linalg.solve(a, b)
        residual = float(np.max(np.abs(mu @ self.generator)))
        if residual > config.STATIONARY_RESIDUAL_TOL:
            logger.warning("stationary residual %.3g above tolerance %.3g", residual, config.STATIONARY_RESIDUAL_TOL)
        return mu

    def stationary_residual(self):
        return float(np.max(np.abs(self.stationary @ self.generator)))

    def distribution_at(self, start, t):
        mu0 = start if isinstance(start, np.ndarray) else self.point_mass(start)
        return mu0 @ scipy.linalg.expm(self.generator * t)

    def _evolve_on_grid(self, start, times):
        mu0 = start if isinstance(start, np.ndarray) else self.point_mass(start)
        out = []
        for t in times:
            out.append(mu0 @ scipy.linalg.expm(self.generator * float(t)))
        return np.array(out)

    def _site_indicator(self, which):
        states = np.array(self.states)
        if not self.coupled:
            return states.astype(float)
        if which == "upper":
            return (states != 0).astype(float)
        if which == "lower":
            return (states == 1).astype(float)
        if which == "discrepancy":
            return (states == 2).astype(float)
        raise ValueError(f"unknown marginal {which!r}; use upper, lower or discrepancy")

    def site_marginals(self, start, times, which="upper"):
        """Exact P[site x occupied at t] (or the chosen coupled indicator), shape (len(times), 2N+1)."""
        return self._evolve_on_grid(start, times) @ self._site_indicator(which)

    def tv_decay(self, start, times):
        """Exact total variation sum_eta |mu S_t(eta) - mu_st(eta)| on the time grid."""
        distributions = self._evolve_on_grid(start, times)
        return np.abs(distributions - self.stationary).sum(axis=1)

    @cached_property
    def eigenvalues(self):
        return scipy.linalg.eigvals(self.generator)

    def spectral_gap(self):
        """Smallest nonzero -Re(lambda) over the spectrum of the generator."""
        scale = float(np.max(np.abs(np.diag(self.generator))))
        return _smallest_positive(-self.eigenvalues.real, scale)

    def discrepancy_decay_rate(self):
        """
        Slowest decay rate of the coupled generator restricted to configurations
        holding at least one discrepancy.
        """
        if not self.coupled:
            raise ValueError("discrepancy decay needs the coupled chain")
        transient = np.array([2 in s for s in self.states])
        block = self.generator[np.ix_(transient, transient)]
        return float(np.min(-scipy.linalg.eigvals(block).real))

    def stationary_current(self):
        """
        Exact stationary boundary current: the average of the net mass entering
        on the right and the net mass leaving on the left, per unit time.
        """
        if self.coupled:
            raise ValueError("the stationary current is computed on the single-copy chain")
        N = self.N
        mu = self.stationary
        inflow = 0.0
        outflow = 0.0
        for event, rate in clock_table(self.params):
            if event.side == 0:
                continue
            for weight, state in zip(mu, self.states):
                s = list(state)
                if not fire(s, event, N):
                    continue
                delta = sum(s) - sum(state)
                if event.side > 0:
                    inflow += weight * rate * delta
                else:
                    outflow -= weight * rate * delta
        return 0.5 * (inflow + outflow)

    def reflect_flip_defect(self):
        """max |mu_st(c) - mu_st(reflect_flip(c))| over configurations."""
        mu = self.stationary
        defect = 0.0
        for i, state in enumerate(self.states):
            c = CoupledConfiguration(state) if self.coupled else Configuration(state)
            j = self._state_of(reflect_flip(c))
            defect = max(defect, abs(mu[i] - mu[j]))
        return defect


def master_equation_oracle(params, coupled=False, max_dim=None):
    return MasterEquationOracle(params, coupled=coupled, max_dim=max_dim)


def stirring_sector_gap(N, M):
    """
    Spectral gap of pure stirring on {-N..N} restricted to configurations with
    exactly M particles.
    """
    size = 2 * N + 1
    if not 0 <= M <= size:
        raise ValueError(f"M must lie in [0, {size}], got {M}")
    sector = [s for s in itertools.product((0, 1), repeat=size) if sum(s) == M]
    if len(sector) > config.STATE_SPACE_GUARD:
        raise StateSpaceTooLarge(f"sector of {len(sector)} states exceeds the guard")
    if len(sector) == 1:
        return math.nan
    index = {s: i for i, s in enumerate(sector)}
    q = np.zeros((len(sector), len(sector)))
    for i, state in enumerate(sector):
        for bond in range(size - 1):
            if state[bond] != state[bond + 1]:
                s = list(state)
                s[bond], s[bond + 1] = s[bond + 1], s[bond]
                q[i, index[tuple(s)]] += 0.5
    q -= np.diag(q.sum(axis=1))
    # stirring is reversible with respect to the uniform measure, so q is symmetric
    return _smallest_positive(-scipy.linalg.eigvalsh(q), 1.0)


def walk_generator(N):
    """Rate-1/2-per-direction walk on -N..N with jumps off the lattice suppressed."""
    size = 2 * N + 1
    lrw = np.zeros((size, size))
    for i in range(size - 1):
        lrw[i, i + 1] = 0.5
        lrw[i + 1, i] = 0.5
    return lrw - np.diag(lrw.sum(axis=1))


def boundary_potential(N, rate=1.0):
    v = np.zeros(2 * N + 1)
    v[0] = rate
    v[-1] = rate
    return v


def _potential(N, potential):
    if potential is None:
        return boundary_potential(N)
    if isinstance(potential, dict):
        v = np.zeros(2 * N + 1)
        for x, rate in potential.items():
            v[x + N] = rate
        return v
    v = np.asarray(potential, dtype=float)
    if v.shape != (2 * N + 1,):
        raise ValueError(f"potential needs {2 * N + 1} entries, got shape {v.shape}")
    return v


@dataclass
class FeynmanKacSolution:
    N: int
    grid: np.ndarray
    values: np.ndarray

    def at(self, t):
        """pi(., t) at the grid point nearest to t."""
        k = int(np.argmin(np.abs(self.grid - t)))
        return self.values[k]

    def to_rows(self):
        rows = []
        for t, v in zip(self.grid, self.values):
            rows += [(float(t), x - self.N, float(p)) for x, p in enumerate(v)]
        return rows


def feynman_kac_solve(N, horizon, step, potential=None, integrator="expm"):
    """
    Solves dv/dt = (L_rw - V) v with v(., 0) = 1 on the grid 0, step, ..., horizon.

    integrator="expm" propagates with the exact one-step matrix exponential;
    "rk4" uses classical Runge-Kutta and rejects steps outside its stability
    region.
    """
    if step <= 0 or horizon < 0:
        raise ValueError("step must be > 0 and horizon >= 0")
    v_pot = _potential(N, potential)
    a = walk_generator(N) - np.diag(v_pot)
    n_steps = int(round(horizon / step))
    grid = np.arange(n_steps + 1) * step
    values = np.empty((n_steps + 1, 2 * N + 1))
    v = np.ones(2 * N + 1)
    values[0] = v
    if integrator == "expm":
        propagator = scipy.linalg.expm(a * step)
        for k in range(1, n_steps + 1):
            v = propagator @ v
            values[k] = v
    elif integrator == "rk4":
        spectral_radius = float(np.max(np.abs(scipy.linalg.eigvalsh(a))))
        if step * spectral_radius > 2.78:
            raise ValueError(f"step {step} outside the RK4 stability region (radius {spectral_radius:.3g})")
        for k in range(1, n_steps + 1):
            k1 = a @ v
            k2 = a @ (v + 0.5 * step * k1)
            k3 = a @ (v + 0.5 * step * k2)
            k4 = a @ (v + step * k3)
            v = v + step / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
            values[k] = v
    else:
        raise ValueError(f"unknown integrator {integrator!r}")
    return FeynmanKacSolution(N, grid, values)


def killed_walk_decay_rate(N, potential=None):
    """Exact slowest decay rate of the killed walk, -max eig(L_rw - V)."""
    a = walk_generator(N) - np.diag(_potential(N, potential))
    return float(-np.max(scipy.linalg.eigvalsh(a)))


def boundary_time_exceedance(N, horizon, threshold, step):
    """
    P_x[T*(horizon) >= threshold] for every start x, where T* is the time the
    walk spends at {-N, N}. Solved backwards over (position, accumulated
    boundary time) with the boundary time binned at width step; the error is
    O(step).
    """
    size = 2 * N + 1
    n_steps = int(round(horizon / step))
    k_max = max(1, int(math.ceil(threshold / step - 1e-9)))
    propagator = scipy.linalg.expm(walk_generator(N) * step)
    boundary = np.zeros(size, dtype=bool)
    boundary[0] = boundary[-1] = True
    u = np.zeros((size, k_max + 1))
    u[:, k_max] = 1.0
    for _ in range(n_steps):
        w = propagator @ u
        nxt = w.copy()
        nxt[boundary, :k_max] = w[boundary, 1:]
        u = nxt
    return u[:, 0]


@dataclass
class FloorReport:
    N: int
    horizon: float
    sites: np.ndarray
    p_hat: np.ndarray
    stderr: np.ndarray
    delta0: float

    @property
    def min_index(self):
        return int(np.argmin(self.p_hat))

    @property
    def p_min(self):
        return float(self.p_hat[self.min_index])

    @property
    def se_min(self):
        return float(self.stderr[self.min_index])

    @property
    def passed(self):
        return self.p_min > self.delta0

    @property
    def contraction(self):
        """p = 1 - delta (1 - 1/e): per-N^2 survival factor implied by the floor."""
        return 1.0 - self.p_min * (1.0 - math.exp(-1.0))

    @property
    def guaranteed_rate(self):
        return -math.log(self.contraction) / self.N ** 2

    def to_rows(self):
        return [(int(x), float(p), float(s)) for x, p, s in zip(self.sites, self.p_hat, self.stderr)]


def _boundary_times(N, horizon, starts, rng, threshold):
    """Boundary occupation times up to horizon, capped once they reach threshold."""
    pos = np.asarray(starts, dtype=np.int64)
    t = np.zeros(len(pos))
    spent = np.zeros(len(pos))
    active = np.ones(len(pos), dtype=bool)
    while active.any():
        idx = np.flatnonzero(active)
        hold = rng.exponential(1.0, size=idx.size)
        dt = np.minimum(hold, horizon - t[idx])
        spent[idx] += dt * (np.abs(pos[idx]) == N)
        t[idx] += hold
        step = rng.choice((-1, 1), size=idx.size)
        pos[idx] = np.clip(pos[idx] + step, -N, N)
        active[idx] = (t[idx] < horizon) & (spent[idx] < threshold)
    return spent


def hitting_floor_check(N, rng, horizon=None, replicas=10_000, threshold=1.0, delta0=None):
    """
    Monte Carlo estimate of P_x[T*(horizon) >= threshold] per start site for
    the rate-1 walk, with the infimum over x compared to delta0.
    """
    horizon = float(N ** 2) if horizon is None else float(horizon)
    delta0 = config.THRESHOLDS.floor_delta0 if delta0 is None else delta0
    sites = np.arange(-N, N + 1)
    starts = np.repeat(sites, replicas)
    spent = _boundary_times(N, horizon, starts, rng, threshold)
    hits = (spent >= threshold).reshape(len(sites), replicas)
    p_hat = hits.mean(axis=1)
    stderr = np.sqrt(p_hat * (1.0 - p_hat) / replicas)
    report = FloorReport(N, horizon, sites, p_hat, stderr, delta0)
    logger.info("floor N=%d: min_x P=%.4f at x=%d (delta0=%s)", N, report.p_min, sites[report.min_index], delta0)
    return report
