import os
from dataclasses import dataclass, fields, replace

VERSION = "0.4.0"

OUTPUT_DIR = os.getenv("STIRSIM_OUTPUT_DIR", "./runs")
THREADS = int(os.getenv("STIRSIM_THREADS", str(os.cpu_count() or 1)))
LOG_LEVEL = os.getenv("STIRSIM_LOG_LEVEL", "WARNING")
SHOW_PROGRESS = os.getenv("STIRSIM_SHOW_PROGRESS", "False").lower() == "true"

STATE_SPACE_GUARD = int(os.getenv("STIRSIM_STATE_SPACE_GUARD", "20000"))
STATIONARY_RESIDUAL_TOL = float(os.getenv("STIRSIM_STATIONARY_RESIDUAL_TOL", "1e-10"))

EVENT_BATCH = int(os.getenv("STIRSIM_EVENT_BATCH", "4096"))
WINDOW_FACTOR = float(os.getenv("STIRSIM_WINDOW_FACTOR", "1.0"))

BURN_IN_FACTOR = float(os.getenv("STIRSIM_BURN_IN_FACTOR", "10"))
HORIZON_FACTOR = float(os.getenv("STIRSIM_HORIZON_FACTOR", "40"))
FIT_WINDOW_LO = float(os.getenv("STIRSIM_FIT_WINDOW_LO", "5"))
FIT_WINDOW_HI = float(os.getenv("STIRSIM_FIT_WINDOW_HI", "40"))
BIN_DIVISOR = float(os.getenv("STIRSIM_BIN_DIVISOR", "50"))
GRID_POINTS = int(os.getenv("STIRSIM_GRID_POINTS", "201"))
BOOTSTRAP_ROUNDS = int(os.getenv("STIRSIM_BOOTSTRAP_ROUNDS", "200"))


@dataclass(frozen=True)
class Thresholds:
    sigma_tol: float = float(os.getenv("STIRSIM_SIGMA_TOL", "3"))
    fit_rel_tol: float = float(os.getenv("STIRSIM_FIT_REL_TOL", "0.10"))
    scaling_ratio_max: float = float(os.getenv("STIRSIM_SCALING_RATIO_MAX", "2"))
    fit_r2_min: float = float(os.getenv("STIRSIM_FIT_R2_MIN", "0.98"))
    profile_r2_min: float = float(os.getenv("STIRSIM_PROFILE_R2_MIN", "0.99"))
    ks_level: float = float(os.getenv("STIRSIM_KS_LEVEL", "0.01"))
    floor_delta0: float = float(os.getenv("STIRSIM_FLOOR_DELTA0", "0.01"))
    support_floor: int = int(os.getenv("STIRSIM_SUPPORT_FLOOR", "30"))

    def with_overrides(self, overrides):
        """Returns a copy with the given fields replaced; values may be strings."""
        known = {f.name: f.type for f in fields(self)}
        updates = {}
        for key, value in (overrides or {}).items():
            if key not in known:
                raise KeyError(key)
            updates[key] = int(value) if key == "support_floor" else float(value)
        return replace(self, **updates)

    def as_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


THRESHOLDS = Thresholds()
