import json
import os

import numpy as np
import pytest

import config
from cli.arguments import build_parser, collect_raw
from cli.runner import main, replay, run, validate
from estimators.oracles import master_equation_oracle, parse_dense, stirring_sector_gap
from lattice.configuration import ModelKind, ModelParams
from utils import SpecValidationError, WindowTooSparse, read_manifest


def read(path):
    with open(path, "r") as f:
        return f.read()


def test_validate_fills_defaults():
    spec = validate({"command": "survival", "N": 2, "seed": 1})
    assert spec.params == ModelParams.current(2)
    assert spec.horizon == config.HORIZON_FACTOR * 4
    assert spec.horizon_explicit is None
    assert spec.replicas == 20_000
    assert spec.window == (20.0, 160.0)
    assert spec.bin_width == 1.0
    assert spec.burn_in == 40.0
    assert spec.sample_horizon == 4.0
    assert spec.policy.is_uniform
    assert spec.fmt == "csv"
    assert spec.thresholds == config.THRESHOLDS


@pytest.mark.parametrize("command,horizon", [("floor", 9.0), ("fk", 50.0), ("oracle", 25.0), ("compare", 360.0)])
def test_validate_default_horizons(command, horizon):
    assert validate({"command": command, "N": 3, "seed": 0}).horizon == horizon


def test_validate_scaling_defaults():
    spec = validate({"command": "scaling", "seed": 0})
    assert spec.N_list == (4, 8, 16)
    assert spec.params.N == 4


def test_validate_draws_a_seed():
    spec = validate({"command": "oracle", "N": 1})
    assert 0 <= spec.seed < 2 ** 64


def test_validate_collects_every_problem():
    raw = {"command": "survival", "N": "0", "replicas": "0", "format": "xml", "threshold": {"bogus": "1"},
           "z0": "left"}
    with pytest.raises(SpecValidationError) as info:
        validate(raw)
    errors = info.value.errors
    assert len(errors) >= 5
    assert any(e.startswith("N must be") for e in errors)
    assert any(e.startswith("replicas") for e in errors)
    assert any(e.startswith("format") for e in errors)
    assert "threshold: unknown key 'bogus'" in errors
    assert any(e.startswith("z0") for e in errors)


@pytest.mark.parametrize("raw", [
    {"command": "survival", "N": 2, "rho_plus": 0.6},
    {"command": "survival", "N": 2, "model": "density", "rho_plus": 0.2, "rho_minus": 0.5},
    {"command": "compare", "N": 2, "model": "density", "rho_plus": 0.6, "rho_minus": 0.4},
    {"command": "teleport", "N": 2},
    {"command": "stationary", "N": 2, "coupled": True},
    {"command": "fk", "N": 2, "step": 0},
    {"command": "scaling", "N_list": "8,4"},
    {"command": "survival", "N": 2, "initial": "xx0"},
    {"command": "simulate", "N": 1, "times": "2,1"},
    {"command": "survival", "N": 1, "window": "5"},
    {"command": "survival", "N": 1, "seed": -1},
    {"command": "survival", "N": 2, "z0": "-1", "initial": "x1x00"},
    {"command": "compare", "N": 1, "z0": "1", "eta_star": "xx0"},
])
def test_validate_rejects(raw):
    with pytest.raises(SpecValidationError):
        validate(raw)


def test_threshold_overrides():
    spec = validate({"command": "compare", "N": 1, "seed": 0, "threshold": {"ks_level": "0.05", "support_floor": "5"}})
    assert spec.thresholds.ks_level == 0.05
    assert spec.thresholds.support_floor == 5


def test_spec_roundtrips_through_its_raw_form():
    spec = validate({"command": "compare", "N": 2, "seed": 9, "times": "1,2", "threshold": {"sigma_tol": "4"},
                     "window": "1,3", "out": "somewhere"})
    assert validate(spec.to_dict()) == spec
    assert len(spec.time_bins) == int(spec.horizon / spec.bin_width) + 1


def test_config_file_values_yield_to_flags(tmp_path):
    path = tmp_path / "run.conf"
    path.write_text("# survival run\nN = 3\nj = 2\nrho-plus = \nthreshold.ks_level = 0.05\n")
    args = build_parser().parse_args(["survival", "--config", str(path), "-N", "2", "--threshold", "sigma_tol=4"])
    raw = collect_raw(args)
    assert raw["N"] == 2
    assert raw["j"] == "2"
    assert raw["threshold"] == {"ks_level": "0.05", "sigma_tol": "4"}
    spec = validate(dict(raw, seed=1))
    assert spec.params.j == 2.0
    assert spec.thresholds.sigma_tol == 4.0


def test_bad_threshold_flag():
    args = build_parser().parse_args(["oracle", "-N", "1", "--threshold", "sigma_tol"])
    with pytest.raises(SpecValidationError):
        collect_raw(args)


def test_main_reports_validation_errors(tmp_path, capsys):
    assert main(["survival", "-N", "0", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error=SpecValidationError message=N must be")
    assert not os.path.exists(tmp_path / "manifest.json")


def test_validate_accepts_tag_on_a_discrepancy():
    spec = validate({"command": "survival", "N": 2, "seed": 0, "z0": "1", "initial": "x1xx0"})
    assert spec.policy.site == 1


def test_main_reports_tag_off_discrepancy(tmp_path, capsys):
    assert main(["compare", "-N", "1", "--z0", "0", "--eta-star", "x1x", "--out", str(tmp_path)]) == 2
    err = capsys.readouterr().err
    assert err.startswith("error=SpecValidationError message=z0: site 0 is not a discrepancy of x1x")


def test_oracle_run_writes_tables_and_manifest(tmp_path, capsys):
    out = tmp_path / "oracle"
    assert main(["oracle", "-N", "1", "--seed", "7", "--out", str(out)]) == 0
    files = sorted(os.listdir(out))
    assert files == ["gap.txt", "generator.txt", "manifest.json", "stationary.csv", "tv_decay.csv"]
    manifest = read_manifest(out / "manifest.json")
    assert manifest["status"] == "completed"
    assert manifest["seed"] == 7
    assert manifest["version"] == config.VERSION
    assert manifest["spec"]["command"] == "oracle"
    assert read(out / "generator.txt").startswith("# 8 8\n")
    generator = parse_dense(read(out / "generator.txt"))
    assert np.allclose(generator, master_equation_oracle(ModelParams.current(1)).generator)
    gaps = dict(line.split("=") for line in read(out / "gap.txt").splitlines())
    assert float(gaps["stirring_sector_gap"]) == pytest.approx(stirring_sector_gap(1, 1))
    assert read(out / "stationary.csv").splitlines()[0] == "index,configuration,probability"
    assert "spectral_gap=" in capsys.readouterr().out


def test_same_seed_same_bytes(tmp_path):
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        assert main(["floor", "-N", "2", "--replicas", "300", "--seed", "42", "--out", str(out)]) == 0
    assert read(first / "floor.csv") == read(second / "floor.csv")
    assert read(first / "floor.txt") == read(second / "floor.txt")


def test_replay_reproduces_run(tmp_path):
    out = tmp_path / "first"
    assert main(["floor", "-N", "1", "--replicas", "200", "--seed", "3", "--step", "0.05", "--out", str(out)]) == 0
    result = replay(str(out / "manifest.json"), out_dir=str(tmp_path / "again"))
    assert result.status == 0
    assert read(out / "floor.csv") == read(tmp_path / "again" / "floor.csv")
    assert read(out / "floor.csv").splitlines()[0] == "site,p_hat,stderr,exact"


def test_replay_subcommand(tmp_path):
    out = tmp_path / "fk"
    assert main(["fk", "-N", "1", "--horizon", "2", "--step", "0.5", "--seed", "1", "--out", str(out)]) == 0
    assert main(["replay", str(out / "manifest.json"), "--out", str(tmp_path / "fk2")]) == 0
    assert read(out / "fk.csv") == read(tmp_path / "fk2" / "fk.csv")


def test_tsv_format(tmp_path):
    out = tmp_path / "fk"
    assert main(["fk", "-N", "1", "--horizon", "1", "--step", "0.5", "--format", "tsv", "--out", str(out)]) == 0
    assert read(out / "fk.tsv").splitlines()[0] == "t\tsite\tpi"


def test_simulate_single_and_coupled(tmp_path):
    single = tmp_path / "single"
    assert main(["simulate", "-N", "1", "--horizon", "5", "--times", "0,1,5", "--replicas", "20",
                 "--threads", "1", "--seed", "3", "--out", str(single)]) == 0
    assert sorted(os.listdir(single)) == ["manifest.json", "marginals.csv", "trajectory.csv"]
    assert len(read(single / "marginals.csv").splitlines()) == 1 + 3 * 3

    coupled = tmp_path / "coupled"
    assert main(["simulate", "-N", "1", "--coupled", "--horizon", "5", "--seed", "3", "--out", str(coupled)]) == 0
    lines = read(coupled / "snapshots.csv").splitlines()
    assert lines[0] == "t,configuration,live_labels"
    assert lines[1].startswith("0.0,xxx,")


def test_pipeline_is_looked_up_at_run_time(tmp_path, mocker, capsys):
    fake = mocker.patch("cli.pipelines.run_survival", return_value=(["survival.csv"], {"b_hat": 0.125}))
    assert main(["survival", "-N", "1", "--seed", "5", "--out", str(tmp_path)]) == 0
    spec, rng = fake.call_args.args
    assert spec.seed == 5 and spec.params.model_kind is ModelKind.CURRENT
    assert "b_hat=0.125" in capsys.readouterr().out


def test_failed_run_marks_manifest(tmp_path, mocker):
    mocker.patch("cli.pipelines.run_survival", side_effect=WindowTooSparse("2 grid points"))
    assert main(["survival", "-N", "1", "--seed", "5", "--out", str(tmp_path)]) == 2
    manifest = json.loads(read(tmp_path / "manifest.json"))
    assert manifest["status"] == "failed"
    assert manifest["message"] == "WindowTooSparse: 2 grid points"


def test_unexpected_failure_propagates(tmp_path, mocker):
    mocker.patch("cli.pipelines.run_oracle", side_effect=RuntimeError("boom"))
    with pytest.raises(RuntimeError):
        run(validate({"command": "oracle", "N": 1, "seed": 0, "out": str(tmp_path)}))
    assert read_manifest(tmp_path / "manifest.json")["message"] == "Run failed: boom"
