import pytest

from lattice.configuration import (
    Configuration,
    CoupledConfiguration,
    ModelKind,
    ModelParams,
    SiteState,
    coerce_initial,
    compose,
    counts,
    decompose,
    reflect_flip,
)
from utils import InvalidParams, OrderViolation


def test_params_current_defaults():
    params = ModelParams.current(4, j=2.0)
    assert params.model_kind is ModelKind.CURRENT
    assert params.size == 9
    assert params.epsilon == 0.25
    assert params.boundary_rate == pytest.approx(0.25)
    assert params.right_window == (3, 4)
    assert params.left_window == (-4, -3)
    assert list(params.sites()) == list(range(-4, 5))


def test_params_kind_from_string():
    params = ModelParams(N=2, rho_plus=0.6, rho_minus=0.2, model_kind="density")
    assert params.model_kind is ModelKind.DENSITY
    assert ModelParams.from_dict(params.to_dict()) == params


@pytest.mark.parametrize("kwargs", [
    dict(N=0),
    dict(N=-1),
    dict(N=2, j=0.0),
    dict(N=2, rho_plus=0.5, rho_minus=0.1),
    dict(N=2, rho_plus=0.2, rho_minus=0.5, model_kind="density"),
    dict(N=2, rho_plus=1.5, rho_minus=0.5, model_kind="density"),
    dict(N=2, rho_plus=0.5, model_kind="density"),
])
def test_params_rejected(kwargs):
    with pytest.raises(InvalidParams):
        ModelParams(**kwargs)


def test_equal_densities_allowed():
    params = ModelParams.density(1, 0.3, 0.3)
    assert params.rho_plus == params.rho_minus


def test_signed_indexing():
    c = Configuration.from_string("10011")
    assert c.N == 2
    assert c[-2] == 1
    assert c[0] == 0
    assert c[2] == 1
    with pytest.raises(IndexError):
        c[3]


def test_compose_decompose():
    eta1 = Configuration.from_string("11010")
    eta2 = Configuration.from_string("01000")
    c = compose(eta1, eta2)
    assert c.to_string() == "x10x0"
    assert decompose(c) == (eta1, eta2)
    assert counts(c) == (2, 1, 2)
    assert c.ne_sites() == [-2, 1]


def test_compose_rejects_unordered_pair():
    with pytest.raises(OrderViolation):
        compose(Configuration.from_string("010"), Configuration.from_string("110"))


def test_indicators_one_hot():
    c = CoupledConfiguration.from_string("x10")
    assert c.indicators(-1) == (1, 0, 0)
    assert c.indicators(0) == (0, 1, 0)
    assert c.indicators(1) == (0, 0, 1)


def test_bad_coupled_character():
    with pytest.raises(InvalidParams):
        CoupledConfiguration.from_string("x2x")


def test_even_length_rejected():
    with pytest.raises(InvalidParams):
        Configuration.from_string("0101")


def test_reflect_flip_single():
    assert reflect_flip(Configuration.from_string("11000")).to_string() == "11100"


def test_reflect_flip_coupled_keeps_order():
    c = CoupledConfiguration.from_string("x1x00")
    flipped = reflect_flip(c)
    assert flipped.to_string() == "11x0x"
    eta1, eta2 = decompose(flipped)
    assert all(a >= b for a, b in zip(eta1.occupancy, eta2.occupancy))


def test_coerce_initial_defaults():
    assert coerce_initial(None, 2) == Configuration.empty(2)
    assert coerce_initial(None, 2, coupled=True) == CoupledConfiguration.all_discrepancies(2)
    assert coerce_initial("x1x", 1, coupled=True).states[1] is SiteState.ONE
    with pytest.raises(InvalidParams):
        coerce_initial("000", 2)
