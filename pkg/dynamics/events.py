"""
Clock alphabet of the single-copy dynamics and the transition rules behind it.

The same rules drive the Gillespie simulator and the exact generator built by
the master-equation oracle: `clock_table` lists every clock with its rate and
`fire` applies one clock to a mutable occupancy list. A clock whose guard
fails leaves the configuration unchanged.
"""
from dataclasses import dataclass
from typing import Optional

from lattice.configuration import Configuration, CoupledConfiguration, ModelKind
from utils import BondOutOfRange, WrongModel

STIR = "stir"
DENSITY_SET = "density_set"
CURRENT_BIRTH = "current_birth"
CURRENT_DEATH = "current_death"

_CODES = {STIR: 0, DENSITY_SET: 1, CURRENT_BIRTH: 2, CURRENT_DEATH: 3}


@dataclass(frozen=True)
class EventKind:
    tag: str
    site: int
    value: Optional[int] = None

    @classmethod
    def stir(cls, x):
        return cls(STIR, x)

    @classmethod
    def density_set(cls, side, value, N):
        return cls(DENSITY_SET, N if side > 0 else -N, int(value))

    @classmethod
    def current_birth(cls, x):
        return cls(CURRENT_BIRTH, x)

    @classmethod
    def current_death(cls, x):
        return cls(CURRENT_DEATH, x)

    @property
    def side(self):
        if self.tag == STIR:
            return 0
        if self.tag == CURRENT_BIRTH:
            return 1
        if self.tag == CURRENT_DEATH:
            return -1
        return 1 if self.site > 0 else -1

    def __str__(self):
        if self.tag == DENSITY_SET:
            return f"{self.tag}({self.site:+d},{self.value})"
        return f"{self.tag}({self.site:+d})"


def clock_table(params, boundaries=True):
    """Every clock of the generator L0 + L' (density) or L0 + Lb (current), with its rate."""
    N = params.N
    table = [(EventKind.stir(x), 0.5) for x in range(-N, N)]
    if not boundaries:
        return tuple(table)
    if params.model_kind is ModelKind.DENSITY:
        table += [
            (EventKind.density_set(+1, 1, N), params.rho_plus),
            (EventKind.density_set(+1, 0, N), 1.0 - params.rho_plus),
            (EventKind.density_set(-1, 1, N), params.rho_minus),
            (EventKind.density_set(-1, 0, N), 1.0 - params.rho_minus),
        ]
    else:
        rate = params.boundary_rate
        table += [(EventKind.current_birth(x), rate) for x in params.right_window]
        table += [(EventKind.current_death(x), rate) for x in params.left_window]
    return tuple(table)


def compile_event(event, N):
    """Reduces an event to (code, 0-based index, value) for the inner loops."""
    return (_CODES[event.tag], event.site + N, 0 if event.value is None else event.value)


def fire_code(occ, code, i, value):
    """Applies a compiled clock to occ in place; returns True if anything changed."""
    if code == 0:
        a = occ[i]
        b = occ[i + 1]
        if a == b:
            return False
        occ[i] = b
        occ[i + 1] = a
        return True
    if code == 1:
        if occ[i] == value:
            return False
        occ[i] = value
        return True
    if code == 2:
        # D+ eta(x) = (1 - eta(x)) eta(x+1) ... eta(N)
        if occ[i]:
            return False
        for k in range(i + 1, len(occ)):
            if not occ[k]:
                return False
        occ[i] = 1
        return True
    # D- eta(x) = eta(x) (1 - eta(x-1)) ... (1 - eta(-N))
    if not occ[i]:
        return False
    for k in range(i):
        if occ[k]:
            return False
    occ[i] = 0
    return True


def fire(occ, event, N):
    return fire_code(occ, *compile_event(event, N))


def affected_indices(code, i):
    return (i, i + 1) if code == 0 else (i,)


def _check_model(params, kind):
    if params.model_kind is not kind:
        raise WrongModel(f"operation needs the {kind.value} model, params are {params.model_kind.value}")


def apply_stirring(c, x):
    """Exchanges the contents of sites x and x+1 of a single or coupled configuration."""
    N = c.N
    if not -N <= x <= N - 1:
        raise BondOutOfRange(f"bond {x} outside [{-N}, {N - 1}]")
    if isinstance(c, CoupledConfiguration):
        states = list(c.states)
        states[x + N], states[x + N + 1] = states[x + N + 1], states[x + N]
        return CoupledConfiguration(tuple(states))
    occ = list(c.occupancy)
    fire_code(occ, 0, x + N, 0)
    return Configuration(tuple(occ))


def apply_density_boundary(c, side, value, params):
    """Sets site +N (side > 0) or -N (side < 0) to value."""
    _check_model(params, ModelKind.DENSITY)
    occ = list(c.occupancy)
    fire(occ, EventKind.density_set(side, value, c.N), c.N)
    return Configuration(tuple(occ))


def apply_current_boundary(c, side, params):
    """
    Fires the unique active boundary clock on one side, if any.

    Right side: a particle is born at the last empty site of {N-1, N};
    left side: the first particle of {-N, -N+1} dies. Identity otherwise.
    """
    _check_model(params, ModelKind.CURRENT)
    N = c.N
    occ = list(c.occupancy)
    if side > 0:
        for x in reversed(params.right_window):
            if fire(occ, EventKind.current_birth(x), N):
                break
    else:
        for x in params.left_window:
            if fire(occ, EventKind.current_death(x), N):
                break
    return Configuration(tuple(occ))
