"""
One function per subcommand. Each takes a validated RunSpec and the master
generator, writes its tables under spec.out_dir and returns the written file
names together with a short summary for the console.
"""
import logging
import os

import numpy as np

from auxwalk.rates import RATE_HEADER, bin_resolution_check, estimate_rates
from auxwalk.walk import CURVE_HEADER, compare_extinction, sample_aux_extinctions
from dynamics.gillespie import estimate_marginals, estimate_stationary_profile, evolve
from estimators.fitting import FIT_HEADER, fit_exponential_rate, tv_bound
from estimators.oracles import (
    boundary_time_exceedance,
    feynman_kac_solve,
    format_dense,
    hitting_floor_check,
    killed_walk_decay_rate,
    master_equation_oracle,
    stirring_sector_gap,
)
from estimators.scaling import DETAIL_HEADER, SCALING_HEADER, scaling_table
from estimators.survival import SurvivalCurve
from harris.coupled import estimate_coupled_marginals, evolve_coupled, survival_samples
from lattice.configuration import Configuration, CoupledConfiguration, coerce_initial
from utils import atomic_write_text, write_csv

logger = logging.getLogger(__name__)

SURVIVAL_HEADER = ("t", "p_hat", "stderr", "n_alive", "n_replicas")
SNAPSHOT_HEADER = ("t", "configuration", "live_labels")


class Emitter:
    """Collects the files one pipeline writes; CSV or TSV per the spec's format."""

    def __init__(self, spec):
        self.spec = spec
        self.files = []
        self.delimiter = "\t" if spec.fmt == "tsv" else ","
        self.extension = spec.fmt

    def table(self, name, header, rows):
        filename = f"{name}.{self.extension}"
        write_csv(os.path.join(self.spec.out_dir, filename), header, rows, delimiter=self.delimiter)
        self.files.append(filename)
        return filename

    def text(self, filename, content):
        atomic_write_text(os.path.join(self.spec.out_dir, filename), content)
        self.files.append(filename)
        return filename


def _marginal_rows(times, p_hat, stderr, N):
    return [(float(t), x - N, float(p), float(s))
            for t, p_row, s_row in zip(times, p_hat, stderr)
            for x, (p, s) in enumerate(zip(p_row, s_row))]


def run_simulate(spec, rng):
    out = Emitter(spec)
    params = spec.params
    traj_rng, marg_rng = rng.spawn(2)
    summary = {}
    if spec.coupled:
        grid = list(spec.times) or list(np.linspace(0.0, spec.horizon, 11))
        snapshots = evolve_coupled(spec.initial, spec.horizon, params, traj_rng, grid)
        out.table("snapshots", SNAPSHOT_HEADER, [s.to_row() for s in snapshots])
        summary["final"] = snapshots[-1].configuration.to_string()
    else:
        trajectory = evolve(spec.initial, spec.horizon, params, traj_rng,
                            sample_times=list(spec.times) or None)
        out.table("trajectory", ("t", "configuration"), trajectory.to_rows())
        summary["jumps"] = len(trajectory.states) - 1
    if spec.times and spec.replicas > 1:
        if spec.coupled:
            p_hat, stderr, _, _ = estimate_coupled_marginals(params, spec.times, spec.replicas, marg_rng,
                                                             initial=spec.initial, workers=spec.threads)
        else:
            p_hat, stderr = estimate_marginals(params, spec.times, spec.replicas, marg_rng,
                                               initial=spec.initial, workers=spec.threads)
        out.table("marginals", ("t", "site", "p_hat", "stderr"), _marginal_rows(spec.times, p_hat, stderr, params.N))
    return out.files, summary


def run_survival(spec, rng):
    out = Emitter(spec)
    sim_rng, fit_rng = rng.spawn(2)
    curve = survival_samples(spec.params, spec.policy, spec.horizon, spec.replicas, sim_rng,
                             initial=spec.initial, workers=spec.threads)
    out.table("survival", SURVIVAL_HEADER, curve.to_rows())
    bound = tv_bound(curve, spec.params.N)
    out.table("tv_bound", ("t", "bound", "stderr"), bound.to_rows())
    out.table("exchangeability", ("t", "p_hat", "mean_discrepancy_fraction", "fraction_stderr"),
              [(float(t), float(p), float(f), float(s)) for t, p, f, s in
               zip(curve.grid, curve.p_hat, curve.mean_discrepancy_fraction, curve.fraction_stderr)])
    fit = fit_exponential_rate(curve, window=spec.window, rng=fit_rng)
    out.table("fit", FIT_HEADER, [fit.to_row(spec.params.N)])
    return out.files, {"b_hat": fit.b_hat, "b_hat_times_N2": fit.b_hat * spec.params.N ** 2,
                       "r_squared": fit.r_squared}


def run_scaling(spec, rng):
    out = Emitter(spec)
    horizon_policy = None if spec.horizon_explicit is None else (lambda N: spec.horizon_explicit)
    table = scaling_table(spec.params, spec.N_list, horizon_policy=horizon_policy, replicas=spec.replicas,
                          rng=rng, workers=spec.threads, policy=spec.policy)
    out.table("scaling", SCALING_HEADER, table.to_rows())
    out.table("scaling_detail", DETAIL_HEADER, table.detail_rows())
    out.table("fit", FIT_HEADER, [fit.to_row(row.N) for fit, row in zip(table.fits, table.rows)])
    return out.files, {"flatness": table.flatness, "min_r_squared": table.min_r_squared()}


def run_stationary(spec, rng):
    out = Emitter(spec)
    profile = estimate_stationary_profile(spec.params, spec.burn_in, spec.sample_horizon, spec.replicas, rng,
                                          initial=spec.initial, workers=spec.threads)
    out.table("profile", ("site", "mean", "stderr", "n_samples"), profile.to_rows())
    out.table("current", ("current", "stderr", "burn_in", "sample_horizon"),
              [(profile.current, profile.current_stderr, profile.burn_in, profile.sample_horizon)])
    return out.files, {"current": profile.current}


def run_auxwalk(spec, rng):
    out = Emitter(spec)
    rate_rng, walk_rng = rng.spawn(2)
    table = estimate_rates(spec.params, spec.policy, spec.eta_star, spec.time_bins, spec.replicas, rate_rng,
                           workers=spec.threads)
    out.table("rates", RATE_HEADER, table.to_rows())
    check = bin_resolution_check(table, factor=2)
    out.text("resolution.txt", check.to_text() + "\n")
    horizon = min(spec.horizon, table.supported_horizon())
    eta_star = coerce_initial(spec.eta_star, spec.params.N, coupled=True)
    deaths = sample_aux_extinctions(table, spec.policy, eta_star, horizon, spec.replicas, walk_rng)
    grid = np.linspace(0.0, horizon, 101) if horizon > 0 else np.array([0.0])
    curve = SurvivalCurve.from_extinction_times(deaths, grid, horizon=horizon)
    out.table("aux_survival", SURVIVAL_HEADER, curve.to_rows())
    return out.files, {"supported_horizon": horizon, "resolution_max_z": check.max_z}


def run_compare(spec, rng):
    out = Emitter(spec)
    report = compare_extinction(spec.params, spec.policy, spec.eta_star, spec.horizon, spec.replicas, rng,
                                time_bins=spec.time_bins, workers=spec.threads,
                                level=spec.thresholds.ks_level)
    out.text("compare.txt", report.to_text())
    out.table("compare_curves", CURVE_HEADER, report.curve_rows())
    return out.files, {"ks_statistic": report.ks_statistic, "bootstrap_pvalue": report.bootstrap_pvalue,
                       "agree": report.agree}


def run_oracle(spec, rng):
    out = Emitter(spec)
    oracle = master_equation_oracle(spec.params, coupled=spec.coupled)
    out.text("generator.txt", format_dense(oracle.generator))
    if spec.coupled:
        rows = [(i, CoupledConfiguration(s).to_string(), float(p)) for i, (s, p) in
                enumerate(zip(oracle.states, oracle.stationary))]
    else:
        rows = [(i, Configuration(s).to_string(), float(p)) for i, (s, p) in
                enumerate(zip(oracle.states, oracle.stationary))]
    out.table("stationary", ("index", "configuration", "probability"), rows)
    times = list(spec.times) or list(np.linspace(0.0, spec.horizon, 51))
    start = spec.initial if spec.initial is not None else (
        CoupledConfiguration.all_discrepancies(spec.params.N) if spec.coupled else Configuration.empty(spec.params.N))
    tv = oracle.tv_decay(start, times)
    out.table("tv_decay", ("t", "tv"), [(float(t), float(v)) for t, v in zip(times, tv)])
    gap = oracle.spectral_gap()
    lines = [f"spectral_gap={gap!r}"]
    summary = {"spectral_gap": gap}
    if spec.coupled:
        rate = oracle.discrepancy_decay_rate()
        lines.append(f"discrepancy_decay_rate={rate!r}")
        summary["discrepancy_decay_rate"] = rate
    else:
        current = oracle.stationary_current()
        lines.append(f"stationary_current={current!r}")
        summary["stationary_current"] = current
    sector_gap = stirring_sector_gap(spec.params.N, 1)
    lines.append(f"stirring_sector_gap={sector_gap!r}")
    summary["stirring_sector_gap"] = sector_gap
    out.text("gap.txt", "\n".join(lines) + "\n")
    return out.files, summary


def run_fk(spec, rng):
    out = Emitter(spec)
    N = spec.params.N
    solution = feynman_kac_solve(N, spec.horizon, spec.step, integrator=spec.integrator)
    out.table("fk", ("t", "site", "pi"), solution.to_rows())
    rate = killed_walk_decay_rate(N)
    out.text("decay.txt", f"killed_walk_decay_rate={rate!r}\n")
    return out.files, {"decay_rate": rate}


def run_floor(spec, rng):
    out = Emitter(spec)
    N = spec.params.N
    report = hitting_floor_check(N, rng, horizon=spec.horizon, replicas=spec.replicas,
                                 delta0=spec.thresholds.floor_delta0)
    rows = report.to_rows()
    header = ("site", "p_hat", "stderr")
    if spec.step:
        exact = boundary_time_exceedance(N, spec.horizon, 1.0, spec.step)
        rows = [row + (float(e),) for row, e in zip(rows, exact)]
        header += ("exact",)
    out.table("floor", header, rows)
    out.text("floor.txt", "\n".join([
        f"min_site={int(report.sites[report.min_index])}",
        f"p_min={report.p_min!r}",
        f"stderr={report.se_min!r}",
        f"delta0={report.delta0!r}",
        f"contraction={report.contraction!r}",
        f"guaranteed_rate={report.guaranteed_rate!r}",
        f"passed={report.passed}",
    ]) + "\n")
    return out.files, {"p_min": report.p_min, "passed": report.passed}


PIPELINES = {
    "simulate": "run_simulate",
    "survival": "run_survival",
    "scaling": "run_scaling",
    "stationary": "run_stationary",
    "auxwalk": "run_auxwalk",
    "compare": "run_compare",
    "oracle": "run_oracle",
    "fk": "run_fk",
    "floor": "run_floor",
}


def needs_current_model(command):
    return command in ("auxwalk", "compare")
