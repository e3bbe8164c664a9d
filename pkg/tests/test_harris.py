import math

import numpy as np
import pytest

from estimators.oracles import master_equation_oracle
from harris.coupled import (
    CoupledSimulator,
    DiscrepancyLabels,
    StartPolicy,
    apply_mark,
    boundary_death_hazard,
    estimate_coupled_marginals,
    evolve_coupled,
    survival_samples,
)
from harris.marks import A, B, D, KILL, STIR, ClockId, coupled_clock_table, iter_mark_windows, sample_marks
from lattice.configuration import CoupledConfiguration, ModelParams, decompose
from utils import InvalidParams, WrongModel

CURRENT = ModelParams.current(2, j=1.0)
DENSITY = ModelParams.density(2, 0.7, 0.3)


def labelled(text):
    c = CoupledConfiguration.from_string(text)
    N = c.N
    positions = {label: None for label in range(1, len(c) + 1)}
    positions.update({k + 1: x for k, x in enumerate(c.ne_sites())})
    return c, DiscrepancyLabels(positions), N


def mark(c, labels, clock, params=CURRENT):
    return apply_mark(c, labels, clock, params)


def test_clock_table_intensities():
    table = coupled_clock_table(CURRENT)
    stirs = [r for clock, r in table if clock.kind == STIR]
    boundary = [r for clock, r in table if clock.kind != STIR]
    assert len(stirs) == 4 and all(r == 0.5 for r in stirs)
    assert len(boundary) == 10
    assert all(r == pytest.approx(1.0 / 4) for r in boundary)
    kills = [clock for clock, _ in coupled_clock_table(DENSITY) if clock.kind == KILL]
    assert len(kills) == 4


def test_sample_marks_sorted_and_deterministic():
    a = sample_marks(CURRENT, 50.0, np.random.default_rng(3))
    b = sample_marks(CURRENT, 50.0, np.random.default_rng(3))
    assert np.array_equal(a.times, b.times)
    assert np.array_equal(a.clocks, b.clocks)
    assert np.all(np.diff(a.times) >= 0)
    assert a.times.min() > 0 and a.times.max() <= 50.0


def test_sample_marks_counts(rng):
    horizon = 2000.0
    stream = sample_marks(CURRENT, horizon, rng)
    counts = stream.counts_by_clock()
    for (clock, rate), n in zip(stream.table, counts):
        mean = rate * horizon
        assert abs(n - mean) < 5 * math.sqrt(mean)


def test_mark_windows_cover_horizon(rng):
    windows = list(iter_mark_windows(CURRENT, 10.0, rng, window=3.0))
    assert [(w.start, w.horizon) for w in windows] == [(0.0, 3.0), (3.0, 6.0), (6.0, 9.0), (9.0, 10.0)]


def test_stir_moves_labels_with_states():
    c, labels, _ = labelled("x0x1x")
    c2, labels2 = mark(c, labels, ClockId(STIR, -2))
    assert c2.to_string() == "0xx1x"
    assert labels2.positions[1] == -1
    c3, labels3 = mark(c2, labels2, ClockId(STIR, -1))
    assert c3.to_string() == "0xx1x"
    assert labels3.positions[1] == 0 and labels3.positions[2] == -1


def test_a_mark_moves_discrepancy_inward():
    c, labels, _ = labelled("1000x")
    c2, labels2 = mark(c, labels, ClockId(A, 2, +1))
    assert c2.to_string() == "100x1"
    assert labels2.positions[1] == 1


def test_a_mark_guard():
    c, labels, _ = labelled("1001x")
    assert mark(c, labels, ClockId(A, 2, +1)) == (c, labels)


def test_d_edge_kills():
    c, labels, _ = labelled("0001x")
    c2, labels2 = mark(c, labels, ClockId(D, 2, +1))
    assert c2.to_string() == "00011"
    assert labels2.positions[1] is None


def test_d_edge_guard():
    c, labels, _ = labelled("0000x")
    assert mark(c, labels, ClockId(D, 2, +1)) == (c, labels)


def test_d_inner_kills():
    c, labels, _ = labelled("000x1")
    c2, labels2 = mark(c, labels, ClockId(D, 1, +1))
    assert c2.to_string() == "00011"
    assert not labels2.alive(1)


def test_b_marks():
    c, labels, _ = labelled("x0000")
    c2, _ = mark(c, labels, ClockId(B, 2, +1))
    assert c2.to_string() == "x0001"
    c3, _ = mark(c2, labels, ClockId(B, 1, +1))
    assert c3.to_string() == "x0011"
    assert mark(c, labels, ClockId(B, 1, +1))[0] == c


def test_left_side_mirrors_right():
    c, labels, _ = labelled("x1111")
    c2, labels2 = mark(c, labels, ClockId(A, -2, -1))
    assert c2.to_string() == "0x111"
    assert labels2.positions[1] == -1
    c, labels, _ = labelled("x0111")
    c2, labels2 = mark(c, labels, ClockId(D, -2, -1))
    assert c2.to_string() == "00111"
    assert not labels2.alive(1)
    c, labels, _ = labelled("1x111")
    c2, _ = mark(c, labels, ClockId(B, -2, -1))
    assert c2.to_string() == "0x111"


def test_kill_mark_density():
    c, labels, _ = labelled("xxxxx")
    c2, labels2 = mark(c, labels, ClockId(KILL, 2, +1, 1), DENSITY)
    assert c2.to_string() == "xxxx1"
    assert not labels2.alive(5)
    c3, _ = mark(c2, labels2, ClockId(KILL, -2, -1, 0), DENSITY)
    assert c3.to_string() == "0xxx1"


def test_mark_model_mismatch():
    c, labels, _ = labelled("xxxxx")
    with pytest.raises(WrongModel):
        mark(c, labels, ClockId(KILL, 2, +1, 1), CURRENT)
    with pytest.raises(WrongModel):
        mark(c, labels, ClockId(A, 2, +1), DENSITY)


def test_evolve_coupled_start(rng):
    snapshots = evolve_coupled(None, 5.0, CURRENT, rng, [0.0, 5.0])
    first = snapshots[0]
    assert first.configuration.to_string() == "xxxxx"
    assert sorted(first.labels.positions) == [1, 2, 3, 4, 5]
    assert sorted(first.labels.live_sites()) == [-2, -1, 0, 1, 2]


def test_evolve_coupled_without_boundaries_keeps_discrepancies(rng):
    snapshots = evolve_coupled("x01x1", 40.0, CURRENT, rng, [0.0, 10.0, 40.0], boundaries=False)
    for s in snapshots:
        assert len(s.configuration.ne_sites()) == 2


def test_simulator_invariants_hold(rng):
    for params in (CURRENT, DENSITY):
        sim = CoupledSimulator(params, CoupledConfiguration.all_discrepancies(2), rng, check_invariants=True)
        last = sim.n_ne
        for t in np.linspace(1.0, 60.0, 30):
            sim.advance(t)
            eta1, eta2 = decompose(sim.configuration())
            assert all(a >= b for a, b in zip(eta1.occupancy, eta2.occupancy))
            assert sim.n_ne <= last
            last = sim.n_ne


def test_fixed_start_policy(rng):
    sim = CoupledSimulator(CURRENT, CoupledConfiguration.all_discrepancies(2), rng, policy=StartPolicy.fixed(-2))
    assert sim.tagged_site == -2


def test_fixed_start_must_be_a_discrepancy(rng):
    with pytest.raises(InvalidParams):
        CoupledSimulator(CURRENT, CoupledConfiguration.from_string("x1x00"), rng, policy=StartPolicy.fixed(-1))


def test_survival_curve_shape(rng):
    curve = survival_samples(CURRENT, StartPolicy.uniform(), 40.0, 300, rng)
    assert curve.p_hat[0] == 1.0
    assert np.all(np.diff(curve.n_alive) <= 0)
    assert curve.mean_discrepancy_fraction[0] == 1.0
    assert curve.n_replicas == 300


def test_survival_early_stop_matches_tracked(rng):
    seed_a, seed_b = np.random.default_rng(11), np.random.default_rng(11)
    tracked = survival_samples(CURRENT, None, 30.0, 50, seed_a, track_total=True)
    early = survival_samples(CURRENT, None, 30.0, 50, seed_b, track_total=False)
    assert np.array_equal(tracked.extinction_times, early.extinction_times)
    assert early.mean_discrepancy_fraction is None


def test_survival_independent_of_workers():
    a = survival_samples(CURRENT, None, 20.0, 12, np.random.default_rng(4), workers=1)
    b = survival_samples(CURRENT, None, 20.0, 12, np.random.default_rng(4), workers=2)
    assert np.array_equal(a.extinction_times, b.extinction_times)


def test_exchangeability(rng):
    curve = survival_samples(CURRENT, StartPolicy.uniform(), 30.0, 2000, rng)
    diff = np.abs(curve.mean_discrepancy_fraction - curve.p_hat)
    se = np.sqrt(curve.stderr ** 2 + curve.fraction_stderr ** 2)
    assert np.all(diff <= 4 * se + 1e-9)


def test_coupled_marginal_upper_copy_matches_single_chain(rng):
    params = ModelParams.current(1)
    times = [1.0, 5.0]
    p_upper, se_upper, p_lower, se_lower = estimate_coupled_marginals(params, times, 4000, rng)
    oracle = master_equation_oracle(params)
    assert np.all(np.abs(p_upper - oracle.site_marginals("111", times)) <= 4 * np.maximum(se_upper, 1e-3))
    assert np.all(np.abs(p_lower - oracle.site_marginals("000", times)) <= 4 * np.maximum(se_lower, 1e-3))


def test_boundary_hazard_density(rng):
    hazard, se = boundary_death_hazard(ModelParams.density(1, 0.6, 0.4), 30.0, 200, rng)
    assert abs(hazard - 1.0) <= 4 * se


def test_boundary_hazard_needs_density(rng):
    with pytest.raises(WrongModel):
        boundary_death_hazard(CURRENT, 1.0, 1, rng)
