"""
Poisson mark streams for the graphical construction of the coupled process.

Each clock is an independent Poisson process. A window of marks is sampled as
the superposition: a Poisson number of uniform times at the total rate, each
tagged with a clock drawn proportionally to its intensity. Long horizons are
covered window by window, which leaves the law unchanged.
"""
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

import config
from lattice.configuration import ModelKind

logger = logging.getLogger(__name__)

STIR = "stir"
A = "A"
D = "D"
B = "B"
KILL = "kill"


@dataclass(frozen=True)
class ClockId:
    kind: str
    site: int
    side: int = 0
    value: Optional[int] = None

    def __str__(self):
        if self.kind == STIR:
            return f"stir({self.site:+d})"
        if self.kind == KILL:
            return f"kill({self.site:+d},{self.value})"
        return f"{self.kind}({self.site:+d})"


def coupled_clock_table(params, boundaries=True):
    """Clocks of the coupled process with their intensities, in tie-break order."""
    N = params.N
    table = [(ClockId(STIR, x), 0.5) for x in range(-N, N)]
    if not boundaries:
        return tuple(table)
    if params.model_kind is ModelKind.DENSITY:
        table += [
            (ClockId(KILL, N, +1, 1), params.rho_plus),
            (ClockId(KILL, N, +1, 0), 1.0 - params.rho_plus),
            (ClockId(KILL, -N, -1, 1), params.rho_minus),
            (ClockId(KILL, -N, -1, 0), 1.0 - params.rho_minus),
        ]
        return tuple(table)
    rate = params.epsilon * params.j / 2
    for side in (+1, -1):
        edge = side * N
        inner = side * (N - 1)
        table += [
            (ClockId(A, edge, side), rate),
            (ClockId(D, edge, side), rate),
            (ClockId(D, inner, side), rate),
            (ClockId(B, edge, side), rate),
            (ClockId(B, inner, side), rate),
        ]
    return tuple(table)


@dataclass
class MarkStream:
    times: np.ndarray
    clocks: np.ndarray
    table: tuple
    horizon: float
    start: float = 0.0

    def __len__(self):
        return len(self.times)

    def __iter__(self):
        for t, k in zip(self.times.tolist(), self.clocks.tolist()):
            yield t, self.table[k][0]

    def counts_by_clock(self):
        return np.bincount(self.clocks, minlength=len(self.table))


def sample_marks(params, horizon, rng, boundaries=True, start=0.0, table=None):
    """All marks of every clock on (start, horizon], merged and sorted by time then clock order."""
    if table is None:
        table = coupled_clock_table(params, boundaries)
    span = horizon - start
    if span <= 0:
        return MarkStream(np.empty(0), np.empty(0, dtype=np.int64), table, horizon, start)

    rates = np.array([rate for _, rate in table], dtype=float)
    total = rates.sum()
    n = rng.poisson(total * span)
    times = start + rng.uniform(0.0, span, size=n)
    clocks = rng.choice(len(table), size=n, p=rates / total)
    order = np.lexsort((clocks, times))
    times = times[order]
    clocks = clocks[order]
    if n > 1:
        ties = int(np.count_nonzero(np.diff(times) == 0.0))
        if ties:
            logger.warning("%d exact mark-time ties in (%s, %s]; broken by clock order", ties, start, horizon)
    return MarkStream(times, clocks.astype(np.int64), table, horizon, start)


def default_window(params):
    return max(1.0, config.WINDOW_FACTOR * params.N ** 2)


def iter_mark_windows(params, horizon, rng, window=None, boundaries=True):
    """
    Yields consecutive MarkStreams covering (0, horizon].

    horizon may be math.inf, in which case windows are produced for as long
    as the caller keeps asking.
    """
    if window is None:
        window = default_window(params)
    table = coupled_clock_table(params, boundaries)
    start = 0.0
    while start < horizon:
        end = min(start + window, horizon)
        yield sample_marks(params, end, rng, start=start, table=table)
        start = end
