import logging
import os
import sys
from dataclasses import dataclass, field
from datetime import datetime
from typing import Optional, Tuple

import numpy as np

import config
from auxwalk.rates import default_bin_width
from cli import pipelines
from cli.arguments import build_parser, collect_raw
from harris.coupled import StartPolicy
from lattice.configuration import CoupledConfiguration, Configuration, ModelKind, ModelParams, SiteState
from utils import InvalidParams, SpecValidationError, StirSimError, read_manifest, update_status_file

logger = logging.getLogger(__name__)

COMMANDS = tuple(pipelines.PIPELINES)
FORMATS = ("csv", "tsv")
INTEGRATORS = ("expm", "rk4")
# which coupled start the tagged discrepancy is drawn from
TAG_START = {"survival": "initial", "auxwalk": "eta_star", "compare": "eta_star"}

DEFAULT_REPLICAS = {
    "simulate": 1,
    "survival": 20_000,
    "scaling": 20_000,
    "stationary": 100,
    "auxwalk": 10_000,
    "compare": 10_000,
    "floor": 10_000,
}


@dataclass
class RunSpec:
    command: str
    params: ModelParams
    seed: int
    replicas: int
    horizon: float
    out_dir: str
    threads: int = 1
    fmt: str = "csv"
    thresholds: config.Thresholds = field(default_factory=config.Thresholds)
    threshold_overrides: dict = field(default_factory=dict)
    horizon_explicit: Optional[float] = None
    times: Tuple[float, ...] = ()
    N_list: Tuple[int, ...] = ()
    z0: str = "uniform"
    initial: Optional[str] = None
    eta_star: Optional[str] = None
    coupled: bool = False
    burn_in: float = 0.0
    sample_horizon: float = 0.0
    window: Tuple[float, float] = (0.0, 0.0)
    bin_width: float = 1.0
    step: float = 0.0
    integrator: str = "expm"

    @property
    def policy(self):
        return StartPolicy.uniform() if self.z0 == "uniform" else StartPolicy.fixed(int(self.z0))

    @property
    def time_bins(self):
        n_bins = max(1, int(np.ceil(self.horizon / self.bin_width - 1e-9)))
        return np.arange(n_bins + 1) * self.bin_width

    def to_dict(self):
        """Flat raw form; validate(spec.to_dict()) reproduces the spec."""
        return {
            "command": self.command,
            "model": self.params.model_kind.value,
            "N": self.params.N,
            "j": self.params.j,
            "rho_plus": self.params.rho_plus,
            "rho_minus": self.params.rho_minus,
            "seed": self.seed,
            "replicas": self.replicas,
            "horizon": self.horizon_explicit,
            "out": self.out_dir,
            "threads": self.threads,
            "format": self.fmt,
            "threshold": dict(self.threshold_overrides),
            "times": list(self.times),
            "N_list": list(self.N_list),
            "z0": self.z0,
            "initial": self.initial,
            "eta_star": self.eta_star,
            "coupled": self.coupled,
            "burn_in": self.burn_in,
            "sample_horizon": self.sample_horizon,
            "window": list(self.window),
            "bin_width": self.bin_width,
            "step": self.step,
            "integrator": self.integrator,
        }


def _number(raw, key, cast, errors, default=None):
    value = raw.get(key)
    if value is None or value == "":
        return default
    try:
        return cast(value)
    except (TypeError, ValueError):
        errors.append(f"{key}: cannot read {value!r} as {cast.__name__}")
        return default


def _number_list(raw, key, cast, errors):
    value = raw.get(key)
    if value is None or value == "":
        return ()
    items = value.split(",") if isinstance(value, str) else list(value)
    try:
        return tuple(cast(v) for v in items if str(v).strip() != "")
    except (TypeError, ValueError):
        errors.append(f"{key}: cannot read {value!r} as a list of {cast.__name__}")
        return ()


def _bool(value):
    if isinstance(value, bool):
        return value
    return str(value).strip().lower() in ("1", "true", "yes", "on")


def _default_horizon(command, N):
    if command in ("survival", "scaling", "auxwalk", "compare"):
        return config.HORIZON_FACTOR * N ** 2
    if command == "floor":
        return float(N ** 2)
    if command == "fk":
        return 50.0
    if command == "oracle":
        return 25.0
    return float(N ** 2)


def validate(raw):
    """
    Normalizes a raw flat mapping (flags, config file or manifest) into a
    RunSpec, filling defaults. Every problem found is collected and raised
    together as SpecValidationError.
    """
    errors = []
    command = raw.get("command")
    if command not in COMMANDS:
        errors.append(f"command: expected one of {', '.join(COMMANDS)}, got {command!r}")

    model = raw.get("model") or "current"
    if model not in (ModelKind.CURRENT.value, ModelKind.DENSITY.value):
        errors.append(f"model: expected current or density, got {model!r}")

    N_list = _number_list(raw, "N_list", int, errors)
    if command == "scaling":
        N_list = N_list or (4, 8, 16)
        if any(b <= a for a, b in zip(N_list, N_list[1:])):
            errors.append(f"N_list: must be strictly ascending, got {list(N_list)}")
        if any(n < 1 for n in N_list):
            errors.append("N_list: every N must be >= 1")
    N = _number(raw, "N", int, errors, default=N_list[0] if N_list else None)
    if N is None:
        errors.append("N: required")
    j = _number(raw, "j", float, errors, default=1.0)
    rho_plus = _number(raw, "rho_plus", float, errors)
    rho_minus = _number(raw, "rho_minus", float, errors)

    params = None
    if N is not None and model in ("current", "density"):
        try:
            params = ModelParams(N=N, j=j, rho_plus=rho_plus, rho_minus=rho_minus, model_kind=model)
        except InvalidParams as e:
            errors.extend(str(e).split("; "))

    seed = _number(raw, "seed", int, errors)
    if seed is None:
        seed = int(np.random.SeedSequence().entropy % 2 ** 64)
    elif not 0 <= seed < 2 ** 64:
        errors.append(f"seed: must be a 64-bit unsigned integer, got {seed}")

    replicas = _number(raw, "replicas", int, errors, default=DEFAULT_REPLICAS.get(command, 1))
    if replicas is not None and replicas < 1:
        errors.append(f"replicas: must be >= 1, got {replicas}")

    horizon_explicit = _number(raw, "horizon", float, errors)
    if horizon_explicit is not None and horizon_explicit < 0:
        errors.append(f"horizon: must be >= 0, got {horizon_explicit}")

    threads = _number(raw, "threads", int, errors, default=config.THREADS)
    if threads is not None and threads < 1:
        errors.append(f"threads: must be >= 1, got {threads}")

    fmt = raw.get("format") or "csv"
    if fmt not in FORMATS:
        errors.append(f"format: expected csv or tsv, got {fmt!r}")

    overrides = dict(raw.get("threshold") or {})
    thresholds = config.THRESHOLDS
    try:
        thresholds = thresholds.with_overrides(overrides)
    except KeyError as e:
        errors.append(f"threshold: unknown key {e.args[0]!r}")
    except ValueError as e:
        errors.append(f"threshold: {e}")

    times = _number_list(raw, "times", float, errors)
    if any(b <= a for a, b in zip(times, times[1:])) or any(t < 0 for t in times):
        errors.append("times: must be non-negative and strictly ascending")

    z0 = str(raw.get("z0") or "uniform")
    z0_site = None
    if z0 != "uniform":
        try:
            z0_site = int(z0)
        except ValueError:
            errors.append(f"z0: expected 'uniform' or a site, got {z0!r}")
        else:
            if N is not None and not -N <= z0_site <= N:
                errors.append(f"z0: site {z0} outside [-{N}, {N}]")
                z0_site = None

    coupled = _bool(raw.get("coupled", False))
    initial = raw.get("initial") or None
    eta_star = raw.get("eta_star") or None
    starts = {}
    if N is not None:
        for key, text, as_coupled in (("initial", initial, coupled or command in ("survival",)),
                                      ("eta_star", eta_star, True)):
            if text is None:
                continue
            try:
                c = CoupledConfiguration.from_string(text) if as_coupled else Configuration.from_string(text)
                if c.N != N:
                    errors.append(f"{key}: has {len(c)} sites, expected {2 * N + 1}")
                else:
                    starts[key] = c
            except (InvalidParams, ValueError) as e:
                errors.append(f"{key}: {e}")

    tag_start = starts.get(TAG_START.get(command))
    if z0_site is not None and tag_start is not None and tag_start[z0_site] is not SiteState.NE:
        errors.append(f"z0: site {z0_site} is not a discrepancy of {tag_start.to_string()}")

    if pipelines.needs_current_model(command) and model != "current":
        errors.append(f"{command}: the auxiliary walk is defined for model=current")
    if command == "stationary" and coupled:
        errors.append("stationary: the profile is estimated on a single copy")
    if command == "fk" and model != "density":
        logger.info("fk: the killed-walk solve describes the density coupling; model=%s ignored", model)

    step = _number(raw, "step", float, errors, default=0.0 if command == "floor" else 0.1)
    if command == "fk" and step is not None and step <= 0:
        errors.append(f"step: must be > 0, got {step}")
    integrator = raw.get("integrator") or "expm"
    if integrator not in INTEGRATORS:
        errors.append(f"integrator: expected expm or rk4, got {integrator!r}")

    burn_in = _number(raw, "burn_in", float, errors)
    sample_horizon = _number(raw, "sample_horizon", float, errors)
    window = _number_list(raw, "window", float, errors)
    if window and (len(window) != 2 or window[0] >= window[1]):
        errors.append(f"window: expected lo,hi with lo < hi, got {list(window)}")
    bin_width = _number(raw, "bin_width", float, errors)
    if bin_width is not None and bin_width <= 0:
        errors.append(f"bin_width: must be > 0, got {bin_width}")

    if errors:
        raise SpecValidationError(errors)

    N2 = N ** 2
    horizon = horizon_explicit if horizon_explicit is not None else _default_horizon(command, N)
    return RunSpec(
        command=command,
        params=params,
        seed=seed,
        replicas=replicas,
        horizon=float(horizon),
        out_dir=raw.get("out") or os.path.join(config.OUTPUT_DIR, command),
        threads=threads,
        fmt=fmt,
        thresholds=thresholds,
        threshold_overrides=overrides,
        horizon_explicit=horizon_explicit,
        times=times,
        N_list=N_list,
        z0=z0,
        initial=initial,
        eta_star=eta_star,
        coupled=coupled,
        burn_in=burn_in if burn_in else config.BURN_IN_FACTOR * N2,
        sample_horizon=sample_horizon if sample_horizon else float(N2),
        window=tuple(window) if window else (config.FIT_WINDOW_LO * N2, config.FIT_WINDOW_HI * N2),
        bin_width=bin_width if bin_width else default_bin_width(N),
        step=step,
        integrator=integrator,
    )


@dataclass
class RunResult:
    status: int
    files: list
    summary: dict


def run(spec):
    """Runs one validated spec; writes its tables and manifest.json under spec.out_dir."""
    started_at = datetime.now()
    raw = spec.to_dict()
    update_status_file(spec.out_dir, "in_progress", spec=raw, version=config.VERSION, started_at=started_at)
    pipeline = getattr(pipelines, pipelines.PIPELINES[spec.command])
    rng = np.random.default_rng(spec.seed)
    logger.info("running %s with seed %d into %s", spec.command, spec.seed, spec.out_dir)
    try:
        files, summary = pipeline(spec, rng)
    except StirSimError as e:
        update_status_file(spec.out_dir, "failed", spec=raw, message=f"{type(e).__name__}: {e}",
                           version=config.VERSION, started_at=started_at)
        raise
    except Exception as e:
        update_status_file(spec.out_dir, "failed", spec=raw, message=f"Run failed: {e}",
                           version=config.VERSION, started_at=started_at)
        raise
    update_status_file(spec.out_dir, "completed", spec=raw, version=config.VERSION, started_at=started_at,
                       files=files)
    return RunResult(0, files, summary)


def replay(manifest_path, out_dir=None, threads=None):
    """Re-validates and re-runs the spec stored in a manifest."""
    manifest = read_manifest(manifest_path)
    raw = dict(manifest["spec"])
    if out_dir:
        raw["out"] = out_dir
    if threads:
        raw["threads"] = threads
    return run(validate(raw))


def error_line(e):
    message = " | ".join(e.errors) if isinstance(e, SpecValidationError) else str(e)
    return f"error={type(e).__name__} message={message}"


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    level = logging.DEBUG if args.verbose else getattr(logging, config.LOG_LEVEL.upper(), logging.WARNING)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        if args.command == "replay":
            result = replay(args.manifest, out_dir=args.out, threads=args.threads)
        else:
            result = run(validate(collect_raw(args)))
    except StirSimError as e:
        print(error_line(e), file=sys.stderr)
        return 2

    print(f"{args.command} finished: {len(result.files)} files")
    for name in result.files:
        print(f"  - {name}")
    for key, value in result.summary.items():
        print(f"{key}={value}")
    return result.status
