import concurrent.futures
import logging

from tqdm import tqdm

import config

logger = logging.getLogger(__name__)


def spawn_generators(rng, n):
    """Independent child generators; child k depends only on the parent seed and k."""
    return rng.spawn(n) if n > 0 else []


def seed_record(rng):
    """A printable record of the seed material behind a generator."""
    seq = getattr(rng.bit_generator, "seed_seq", None) or getattr(rng.bit_generator, "_seed_seq", None)
    if seq is None:
        return None
    return f"{seq.entropy}:{'.'.join(str(k) for k in seq.spawn_key)}"


class ReplicaPool:
    """
    Fans independent replicas out to worker processes.

    Results come back in replica order whatever the worker count, so any
    aggregation over them is independent of scheduling.
    """

    def __init__(self, workers=1, desc="replicas", show_progress=None):
        self.workers = max(1, int(workers or 1))
        self.desc = desc
        self.show_progress = config.SHOW_PROGRESS if show_progress is None else show_progress

    def map(self, fn, generators):
        n = len(generators)
        disable = not self.show_progress
        if self.workers == 1 or n < 2:
            return [fn(g) for g in tqdm(generators, desc=self.desc, unit="replica", disable=disable)]

        chunksize = max(1, n // (self.workers * 16))
        logger.info("running %d replicas of %s on %d workers (chunksize %d)", n, self.desc, self.workers, chunksize)
        try:
            with concurrent.futures.ProcessPoolExecutor(max_workers=self.workers) as executor:
                return list(tqdm(executor.map(fn, generators, chunksize=chunksize),
                                 total=n, desc=self.desc, unit="replica", disable=disable))
        except Exception as e:
            logger.exception("replica pool failed for %s: %s", self.desc, e)
            raise


def run_replicas(fn, rng, replicas, workers=1, desc="replicas"):
    """Spawns one generator per replica from rng and maps fn over them."""
    return ReplicaPool(workers=workers, desc=desc).map(fn, spawn_generators(rng, replicas))
