import argparse

from utils import SpecValidationError, load_flat_config

# argparse dest -> key of the raw spec mapping
FLAG_KEYS = (
    "model", "N", "j", "rho_plus", "rho_minus", "replicas", "horizon", "seed", "out", "threads", "format",
    "times", "N_list", "z0", "initial", "eta_star", "coupled", "burn_in", "sample_horizon", "window",
    "bin_width", "step", "integrator",
)

SUBCOMMANDS = {
    "simulate": "Simulate one trajectory (single copy, or coupled with --coupled); with --times and "
                "--replicas also site marginals.",
    "survival": "Tagged-discrepancy survival curve, its exponential fit and the TV bound.",
    "scaling": "Fitted decay rate times N^2 over a list of N.",
    "stationary": "Stationary density profile and boundary current.",
    "auxwalk": "Estimate the auxiliary walk's conditional rates and simulate the walk.",
    "compare": "Compare tagged-discrepancy and auxiliary-walk extinction times (KS test).",
    "oracle": "Exact generator, stationary vector, TV decay and spectral gap at small N.",
    "fk": "Solve the killed random walk (Feynman-Kac) equation.",
    "floor": "Probability of spending unit time at the boundary by time N^2, per start site.",
}


def _global_flags():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="Master seed (64-bit); recorded in the manifest.")
    common.add_argument("--threads", type=int, default=None, help="Worker processes for replicas (default: all cores).")
    common.add_argument("--out", type=str, default=None, help="Output directory.")
    common.add_argument("--format", type=str, default=None, choices=["csv", "tsv"], help="Table format.")
    common.add_argument("--config", type=str, default=None, help="Flat key=value file mirroring the flags.")
    common.add_argument("--threshold", action="append", default=None, metavar="KEY=VALUE",
                        help="Override an acceptance threshold, e.g. sigma_tol=4. Repeatable.")
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging.")
    return common


def _model_flags():
    model = argparse.ArgumentParser(add_help=False)
    model.add_argument("--model", type=str, default=None, choices=["current", "density"],
                       help="Boundary mechanism (default: current).")
    model.add_argument("-N", dest="N", type=int, default=None, help="Half-width of the lattice -N..N.")
    model.add_argument("-j", dest="j", type=float, default=None, help="Current-reservoir intensity j > 0.")
    model.add_argument("--rho-plus", dest="rho_plus", type=float, default=None, help="Right reservoir density.")
    model.add_argument("--rho-minus", dest="rho_minus", type=float, default=None, help="Left reservoir density.")
    model.add_argument("--replicas", type=int, default=None, help="Independent replicas.")
    model.add_argument("--horizon", type=float, default=None, help="Time horizon.")
    model.add_argument("--times", type=str, default=None, help="Comma-separated sample times.")
    model.add_argument("--N-list", dest="N_list", type=str, default=None, help="Comma-separated N values (scaling).")
    model.add_argument("--z0", type=str, default=None, help="Tagged start: 'uniform' or a site.")
    model.add_argument("--initial", type=str, default=None, help="Initial configuration, e.g. 01101 or xx1x0.")
    model.add_argument("--eta-star", dest="eta_star", type=str, default=None,
                       help="Initial coupled environment for the auxiliary walk.")
    model.add_argument("--coupled", action="store_true", default=None, help="Use the coupled process.")
    model.add_argument("--burn-in", dest="burn_in", type=float, default=None, help="Burn-in (default 10 N^2).")
    model.add_argument("--sample-horizon", dest="sample_horizon", type=float, default=None,
                       help="Averaging time after burn-in (default N^2).")
    model.add_argument("--window", type=str, default=None, help="Fit window LO,HI (default 5N^2,40N^2).")
    model.add_argument("--bin-width", dest="bin_width", type=float, default=None,
                       help="Rate-table bin width (default max(1, N^2/50)).")
    model.add_argument("--step", type=float, default=None,
                       help="Integrator step (fk) or boundary-time bin for the exact floor column.")
    model.add_argument("--integrator", type=str, default=None, choices=["expm", "rk4"], help="fk integrator.")
    return model


def build_parser():
    common = _global_flags()
    model = _model_flags()
    parser = argparse.ArgumentParser(description="Boundary-driven stirring process simulator.")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, text in SUBCOMMANDS.items():
        subparsers.add_parser(name, parents=[common, model], help=text, description=text)
    replay = subparsers.add_parser("replay", parents=[common], help="Re-run the spec stored in a manifest.json.")
    replay.add_argument("manifest", type=str, help="Path to manifest.json.")
    return parser


def _parse_thresholds(items, errors):
    overrides = {}
    for item in items or []:
        if "=" not in item:
            errors.append(f"threshold: expected KEY=VALUE, got {item!r}")
            continue
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    return overrides


def collect_raw(args):
    """
    Raw spec mapping from parsed arguments: built-in defaults are filled
    later by validate, config-file values come next and explicit flags win.
    """
    raw = {"command": args.command}
    thresholds = {}
    if args.config:
        for key, value in load_flat_config(args.config).items():
            if key.startswith("threshold."):
                thresholds[key.split(".", 1)[1]] = value
            else:
                raw[key] = value
    for key in FLAG_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            raw[key] = value
    errors = []
    thresholds.update(_parse_thresholds(args.threshold, errors))
    if errors:
        raise SpecValidationError(errors)
    raw["threshold"] = thresholds
    raw["command"] = args.command
    return raw
