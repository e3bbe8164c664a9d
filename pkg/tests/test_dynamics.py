import numpy as np
import pytest

from dynamics.events import (
    CURRENT_BIRTH,
    CURRENT_DEATH,
    DENSITY_SET,
    STIR,
    EventKind,
    apply_current_boundary,
    apply_density_boundary,
    apply_stirring,
    clock_table,
    fire,
)
from dynamics.gillespie import (
    SingleCopySimulator,
    estimate_marginals,
    estimate_stationary_profile,
    evolve,
)
from estimators.oracles import master_equation_oracle
from lattice.configuration import Configuration, CoupledConfiguration, ModelParams
from utils import BondOutOfRange, WrongModel


def test_clock_table_current():
    params = ModelParams.current(3, j=1.5)
    table = clock_table(params)
    tags = [event.tag for event, _ in table]
    assert tags.count(STIR) == 6
    assert tags.count(CURRENT_BIRTH) == 2
    assert tags.count(CURRENT_DEATH) == 2
    for event, rate in table:
        if event.tag == STIR:
            assert rate == 0.5
        else:
            assert rate == pytest.approx(1.5 / 6)


def test_clock_table_density_rates():
    params = ModelParams.density(2, 0.7, 0.2)
    rates = {(e.site, e.value): r for e, r in clock_table(params) if e.tag == DENSITY_SET}
    assert rates == {(2, 1): 0.7, (2, 0): pytest.approx(0.3), (-2, 1): 0.2, (-2, 0): 0.8}


def test_clock_table_without_boundaries():
    assert all(e.tag == STIR for e, _ in clock_table(ModelParams.current(2), boundaries=False))


def test_stirring_swaps():
    c = Configuration.from_string("10010")
    assert apply_stirring(c, -2).to_string() == "01010"
    assert apply_stirring(c, 1).to_string() == "10001"
    assert apply_stirring(c, 0).to_string() == "10100"


def test_stirring_coupled():
    c = CoupledConfiguration.from_string("x10")
    assert apply_stirring(c, -1).to_string() == "1x0"


def test_stirring_bond_out_of_range():
    with pytest.raises(BondOutOfRange):
        apply_stirring(Configuration.empty(2), 2)
    with pytest.raises(BondOutOfRange):
        apply_stirring(Configuration.empty(2), -3)


def test_density_boundary():
    params = ModelParams.density(2, 0.6, 0.4)
    c = Configuration.from_string("00000")
    assert apply_density_boundary(c, +1, 1, params).to_string() == "00001"
    assert apply_density_boundary(c, -1, 1, params).to_string() == "10000"
    assert apply_density_boundary(Configuration.full(2), -1, 0, params).to_string() == "01111"


def test_density_boundary_wrong_model():
    with pytest.raises(WrongModel):
        apply_density_boundary(Configuration.empty(2), +1, 1, ModelParams.current(2))


@pytest.mark.parametrize("before,after", [
    ("00000", "00001"),
    ("00001", "00011"),
    ("00011", "00011"),
    ("00010", "00011"),
    ("11101", "11111"),
])
def test_current_birth_right(before, after):
    params = ModelParams.current(2)
    assert apply_current_boundary(Configuration.from_string(before), +1, params).to_string() == after


@pytest.mark.parametrize("before,after", [
    ("11111", "01111"),
    ("01111", "00111"),
    ("00111", "00111"),
    ("01000", "00000"),
    ("10000", "00000"),
])
def test_current_death_left(before, after):
    params = ModelParams.current(2)
    assert apply_current_boundary(Configuration.from_string(before), -1, params).to_string() == after


def test_current_boundary_wrong_model():
    with pytest.raises(WrongModel):
        apply_current_boundary(Configuration.empty(1), +1, ModelParams.density(1, 0.5, 0.5))


def test_fire_reports_change():
    occ = [0, 0, 1]
    assert fire(occ, EventKind.current_birth(0), 1)
    assert occ == [0, 1, 1]
    assert not fire(occ, EventKind.current_birth(1), 1)


def test_evolve_horizon_zero(rng):
    params = ModelParams.current(2)
    trajectory = evolve("01010", 0.0, params, rng)
    assert [s.to_string() for s in trajectory.states] == ["01010"]


def test_evolve_is_deterministic_for_a_seed():
    params = ModelParams.density(2, 0.8, 0.1)
    a = evolve(None, 20.0, params, np.random.default_rng(5))
    b = evolve(None, 20.0, params, np.random.default_rng(5))
    assert a.to_rows() == b.to_rows()


def test_evolve_records_every_jump(rng):
    params = ModelParams.current(2)
    trajectory = evolve(None, 30.0, params, rng)
    assert trajectory.times[0] == 0.0
    assert np.all(np.diff(trajectory.times) > 0)
    for a, b in zip(trajectory.states, trajectory.states[1:]):
        assert a != b


def test_evolve_sample_times(rng):
    params = ModelParams.current(2)
    trajectory = evolve(None, 10.0, params, rng, sample_times=[0.0, 1.0, 10.0])
    assert list(trajectory.times) == [0.0, 1.0, 10.0]
    assert trajectory.states[0] == Configuration.empty(2)
    with pytest.raises(ValueError):
        evolve(None, 10.0, params, rng, sample_times=[2.0, 1.0])


def test_stirring_only_conserves_mass(rng):
    params = ModelParams.current(3)
    sim = SingleCopySimulator(params, Configuration.from_string("1100101").occupancy, rng, boundaries=False)
    for t in np.linspace(1.0, 50.0, 25):
        sim.advance(t)
        assert sum(sim.occupancy) == 4


def test_marginals_match_oracle_small(rng):
    params = ModelParams.current(1, j=1.0)
    times = [1.0, 5.0]
    p_hat, stderr = estimate_marginals(params, times, 4000, rng)
    exact = master_equation_oracle(params).site_marginals(Configuration.empty(1), times)
    assert p_hat.shape == (2, 3)
    assert np.all(np.abs(p_hat - exact) <= 4 * np.maximum(stderr, 1e-3))


def test_stationary_profile_current_sign(rng):
    params = ModelParams.density(2, 0.9, 0.1)
    profile = estimate_stationary_profile(params, 20.0, 200.0, 8, rng)
    assert profile.n_samples == 8
    assert list(profile.sites) == [-2, -1, 0, 1, 2]
    # particles enter on the dense right side and leave on the left
    assert profile.current > 0
    assert profile.mean[-1] > profile.mean[0]


def test_stationary_profile_arguments(rng):
    params = ModelParams.current(1)
    with pytest.raises(ValueError):
        estimate_stationary_profile(params, 1.0, 0.0, 2, rng)
    with pytest.raises(ValueError):
        estimate_stationary_profile(params, 1.0, 1.0, 0, rng)
