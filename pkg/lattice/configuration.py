"""
Configurations of the boundary-driven stirring process on the sites -N..N.

A single copy is an occupancy word over {0,1}. A coupled pair of ordered
copies (eta1 >= eta2 site by site) is stored as one word over three site
states: a discrepancy (eta1=1, eta2=0), a 1-particle (both occupied) or a
0-particle (both empty). Order between the copies is therefore structural.
Public indexing is always by signed site x in [-N, N].
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum, IntEnum
from typing import Optional, Tuple

from utils import InvalidParams, OrderViolation


class ModelKind(str, Enum):
    DENSITY = "density"
    CURRENT = "current"


class SiteState(IntEnum):
    ZERO = 0
    ONE = 1
    NE = 2


STATE_CHARS = {SiteState.ZERO: "0", SiteState.ONE: "1", SiteState.NE: "x"}
CHAR_STATES = {v: k for k, v in STATE_CHARS.items()}


@dataclass(frozen=True)
class ModelParams:
    N: int
    j: float = 1.0
    rho_plus: Optional[float] = None
    rho_minus: Optional[float] = None
    model_kind: ModelKind = ModelKind.CURRENT

    def __post_init__(self):
        object.__setattr__(self, "model_kind", ModelKind(self.model_kind))
        problems = self.problems()
        if problems:
            raise InvalidParams("; ".join(problems))

    def problems(self):
        """Lists every invariant the fields violate (empty when valid)."""
        out = []
        if not isinstance(self.N, int) or isinstance(self.N, bool) or self.N < 1:
            out.append(f"N must be an integer >= 1, got {self.N!r}")
        if not self.j > 0:
            out.append(f"j must be > 0, got {self.j!r}")
        if self.model_kind is ModelKind.DENSITY:
            if self.rho_plus is None or self.rho_minus is None:
                out.append("density model needs rho_plus and rho_minus")
            else:
                if not (0.0 <= self.rho_minus <= 1.0 and 0.0 <= self.rho_plus <= 1.0):
                    out.append("rho_plus and rho_minus must lie in [0, 1]")
                if self.rho_plus < self.rho_minus:
                    out.append(f"rho_plus ({self.rho_plus}) must not be below rho_minus ({self.rho_minus})")
        elif self.rho_plus is not None or self.rho_minus is not None:
            out.append("rho_plus/rho_minus are only meaningful for the density model")
        return out

    @classmethod
    def current(cls, N, j=1.0):
        return cls(N=N, j=j, model_kind=ModelKind.CURRENT)

    @classmethod
    def density(cls, N, rho_plus, rho_minus):
        return cls(N=N, rho_plus=rho_plus, rho_minus=rho_minus, model_kind=ModelKind.DENSITY)

    @property
    def epsilon(self):
        return 1.0 / self.N

    @property
    def size(self):
        return 2 * self.N + 1

    @property
    def boundary_rate(self):
        """Intensity j/(2N) of each current-reservoir boundary clock."""
        return self.j / (2 * self.N)

    @property
    def right_window(self):
        return (self.N - 1, self.N)

    @property
    def left_window(self):
        return (-self.N, -self.N + 1)

    def sites(self):
        return range(-self.N, self.N + 1)

    def index(self, x):
        return x + self.N

    def site(self, i):
        return i - self.N

    def to_dict(self):
        return {
            "N": self.N,
            "j": self.j,
            "rho_plus": self.rho_plus,
            "rho_minus": self.rho_minus,
            "model_kind": self.model_kind.value,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            N=int(data["N"]),
            j=float(data.get("j", 1.0)),
            rho_plus=None if data.get("rho_plus") is None else float(data["rho_plus"]),
            rho_minus=None if data.get("rho_minus") is None else float(data["rho_minus"]),
            model_kind=data.get("model_kind", ModelKind.CURRENT),
        )


def _half_width(length):
    if length < 3 or length % 2 == 0:
        raise InvalidParams(f"a configuration needs 2N+1 >= 3 sites, got {length}")
    return (length - 1) // 2


@dataclass(frozen=True)
class Configuration:
    occupancy: Tuple[int, ...]

    def __post_init__(self):
        occ = tuple(int(v) for v in self.occupancy)
        _half_width(len(occ))
        if any(v not in (0, 1) for v in occ):
            raise InvalidParams("occupancy entries must be 0 or 1")
        object.__setattr__(self, "occupancy", occ)

    @property
    def N(self):
        return (len(self.occupancy) - 1) // 2

    def __len__(self):
        return len(self.occupancy)

    def __getitem__(self, x):
        """Occupation at signed site x."""
        if not -self.N <= x <= self.N:
            raise IndexError(x)
        return self.occupancy[x + self.N]

    def mass(self):
        return sum(self.occupancy)

    def to_string(self):
        return "".join(str(v) for v in self.occupancy)

    @classmethod
    def from_string(cls, text):
        return cls(tuple(int(ch) for ch in text.strip()))

    @classmethod
    def empty(cls, N):
        return cls((0,) * (2 * N + 1))

    @classmethod
    def full(cls, N):
        return cls((1,) * (2 * N + 1))

    def __str__(self):
        return self.to_string()


@dataclass(frozen=True)
class CoupledConfiguration:
    states: Tuple[SiteState, ...]

    def __post_init__(self):
        sts = tuple(SiteState(int(v)) for v in self.states)
        _half_width(len(sts))
        object.__setattr__(self, "states", sts)

    @property
    def N(self):
        return (len(self.states) - 1) // 2

    def __len__(self):
        return len(self.states)

    def __getitem__(self, x):
        if not -self.N <= x <= self.N:
            raise IndexError(x)
        return self.states[x + self.N]

    def indicators(self, x):
        """The triple (eta_ne, eta_1, eta_0) at site x; exactly one entry is 1."""
        s = self[x]
        return (int(s is SiteState.NE), int(s is SiteState.ONE), int(s is SiteState.ZERO))

    def ne_sites(self):
        return [i - self.N for i, s in enumerate(self.states) if s is SiteState.NE]

    def decompose(self):
        return decompose(self)

    def to_string(self):
        return "".join(STATE_CHARS[s] for s in self.states)

    @classmethod
    def from_string(cls, text):
        try:
            return cls(tuple(CHAR_STATES[ch] for ch in text.strip()))
        except KeyError as e:
            raise InvalidParams(f"unknown coupled site character {e.args[0]!r}") from None

    @classmethod
    def all_discrepancies(cls, N):
        """The coupled start eta1 = 1, eta2 = 0 everywhere."""
        return cls((SiteState.NE,) * (2 * N + 1))

    def __str__(self):
        return self.to_string()


def compose(eta1: Configuration, eta2: Configuration) -> CoupledConfiguration:
    """Maps an ordered pair of copies to its three-state encoding."""
    if len(eta1) != len(eta2):
        raise OrderViolation(f"copies have different lengths {len(eta1)} and {len(eta2)}")
    states = []
    for i, (a, b) in enumerate(zip(eta1.occupancy, eta2.occupancy)):
        if a < b:
            raise OrderViolation(f"eta1 < eta2 at site {i - eta1.N}")
        if a == 1 and b == 0:
            states.append(SiteState.NE)
        elif a == 1:
            states.append(SiteState.ONE)
        else:
            states.append(SiteState.ZERO)
    return CoupledConfiguration(tuple(states))


def decompose(c: CoupledConfiguration) -> Tuple[Configuration, Configuration]:
    """Recovers the ordered pair (eta1, eta2) from the three-state encoding."""
    eta1 = tuple(int(s is not SiteState.ZERO) for s in c.states)
    eta2 = tuple(int(s is SiteState.ONE) for s in c.states)
    return Configuration(eta1), Configuration(eta2)


def counts(c: CoupledConfiguration) -> Tuple[int, int, int]:
    """Returns (n_ne, n_one, n_zero)."""
    n_ne = sum(1 for s in c.states if s is SiteState.NE)
    n_one = sum(1 for s in c.states if s is SiteState.ONE)
    return n_ne, n_one, len(c.states) - n_ne - n_one


def reflect_flip(c):
    """
    Site reversal x -> -x combined with particle-hole exchange.

    On a single copy, output(x) = 1 - input(-x). On a coupled pair the copies
    also trade places, (eta1, eta2) -> (1 - eta2, 1 - eta1), so order is kept:
    discrepancies stay discrepancies, 1- and 0-particles swap.
    """
    if isinstance(c, CoupledConfiguration):
        swap = {SiteState.NE: SiteState.NE, SiteState.ONE: SiteState.ZERO, SiteState.ZERO: SiteState.ONE}
        return CoupledConfiguration(tuple(swap[s] for s in reversed(c.states)))
    return Configuration(tuple(1 - v for v in reversed(c.occupancy)))


def coerce_initial(initial, N, coupled=False):
    """Accepts a configuration object or its text form; None means the default start."""
    if initial is None:
        return CoupledConfiguration.all_discrepancies(N) if coupled else Configuration.empty(N)
    if isinstance(initial, str):
        initial = CoupledConfiguration.from_string(initial) if coupled else Configuration.from_string(initial)
    if initial.N != N:
        raise InvalidParams(f"initial configuration has N={initial.N}, expected {N}")
    return initial
