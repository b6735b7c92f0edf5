import json

import numpy as np
import pytest

from sipkit import cli
from sipkit.errors import ParameterError
from sipkit.report import SITE_COLUMNS, Report, parse_csv, read_report, to_csv, to_json


def run(capsys, *argv):
    code = cli.main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def rows_of(csv_text):
    return parse_csv(csv_text)[1]


# profile

def test_profile_first_order_example(capsys):
    code, out, _ = run(capsys, "profile", "--N", "3", "--m", "1", "--b", "1", "--d", "2", "--eps", "0.01", "--first-order")
    assert code == 0
    rows = rows_of(out)
    assert [r["site"] for r in rows] == [1, 2, 3]
    assert np.allclose([r["analytic_density"] for r in rows], [1.01, 1.00, 0.99], rtol=1e-14)
    assert all(r["exact_density"] is None and r["kmc_density"] is None for r in rows)


def test_profile_default_example_close_to_first_order(capsys):
    code, out, _ = run(capsys, "profile", "--eps", "0.01")
    assert code == 0
    assert np.allclose([r["analytic_density"] for r in rows_of(out)], [1.01, 1.00, 0.99], atol=2e-4)


def test_profile_flat_at_zero_eps(capsys):
    _, out, _ = run(capsys, "profile", "--eps", "0")
    assert {r["analytic_density"] for r in rows_of(out)} == {1.0}


def test_profile_explicit_rates_json(capsys):
    code, out, _ = run(capsys, "profile", "--b1", "1", "--d1", "2", "--bN", "1", "--dN", "3", "--format", "json")
    assert code == 0
    rep = json.loads(out)
    assert rep["columns"] == list(SITE_COLUMNS)
    diag = rep["diagnostics"]
    assert diag["particle_flux"] == pytest.approx(-diag["slope_beta"])
    assert diag["slope_beta"] < 0 < diag["particle_flux"]


def test_invalid_parameters_exit_nonzero(capsys):
    code, _, err = run(capsys, "profile", "--N", "1")
    assert code == 2 and "error" in err
    code, _, err = run(capsys, "profile", "--eps", "1.5")
    assert code == 2
    code, _, err = run(capsys, "profile", "--b", "1", "--b1", "1", "--d1", "2", "--bN", "1", "--dN", "2")
    assert code == 2 and "not both" in err
    code, _, err = run(capsys, "profile", "--b1", "1")
    assert code == 2 and "missing" in err


# other subcommands

def test_equilibrium_table(capsys):
    code, out, _ = run(capsys, "equilibrium", "--nmax", "5", "--format", "json")
    rep = json.loads(out)
    assert code == 0
    assert rep["columns"] == ["n", "pmf", "potential"]
    assert [r[1] for r in rep["rows"]] == pytest.approx(0.5 ** np.arange(1, 7))
    assert rep["diagnostics"]["mean_occupancy"] == 1.0


def test_equilibrium_requires_equal_fugacities(capsys):
    code, _, _ = run(capsys, "equilibrium", "--eps", "0.1")
    assert code == 2


def test_mclennan_example(capsys):
    code, out, _ = run(capsys, "mclennan", "--format", "json")
    rep = json.loads(out)
    assert code == 0 and rep["passed"]
    assert rep["diagnostics"]["A"] == pytest.approx(1.0)
    assert rep["diagnostics"]["B"] == pytest.approx(-0.5)
    col = rep["columns"].index("coefficient")
    assert [r[col] for r in rep["rows"]] == pytest.approx([0.5, 0.0, -0.5])
    checks = {c["name"]: c for c in rep["diagnostics"]["checks"]}
    assert checks["mclennan_equals_leq"]["value"] <= 1e-12


def test_mclennan_special_case(capsys):
    code, out, _ = run(capsys, "mclennan", "--N", "4", "--b", "1", "--d", "2", "--m", "1", "--format", "json")
    diag = json.loads(out)["diagnostics"]
    assert diag["special_case_d_equals_b_plus_m"] == pytest.approx([0.6, 0.2, -0.2, -0.6])


def test_mclennan_degenerate(capsys):
    code, _, err = run(capsys, "mclennan", "--b", "3", "--d", "2", "--m", "1")
    assert code == 2 and "vanishes" in err


def test_mclennan_negative_control(capsys):
    code, _, err = run(capsys, "mclennan", "--corrupt-coefficients", "1e-3")
    assert code == 1 and "mclennan_generator_identity" in err


def test_solve_reports_exact_and_analytic(capsys):
    code, out, _ = run(capsys, "solve", "--eps", "0.05", "--nmax", "30", "--format", "json")
    rep = json.loads(out)
    assert code == 0
    exact = [r[rep["columns"].index("exact_density")] for r in rep["rows"]]
    analytic = [r[rep["columns"].index("analytic_density")] for r in rep["rows"]]
    assert np.allclose(exact, analytic, atol=1e-6)
    assert rep["diagnostics"]["residual"] <= 1e-10
    assert rep["diagnostics"]["dropped_rate"] > 0


def test_solve_small_box_fails_honestly(capsys):
    code, _, err = run(capsys, "solve", "--eps", "0.05", "--nmax", "10")
    assert code == 1 and "exact_profile_matches_analytic" in err


def test_dyson_command(capsys):
    code, out, _ = run(capsys, "dyson", "--nmax", "30", "--format", "json")
    rep = json.loads(out)
    assert code == 0, rep["diagnostics"]["checks"]
    names = {c["name"] for c in rep["diagnostics"]["checks"]}
    assert {"finite_difference_first_order", "finite_difference_second_order"} <= names


def test_simulate_tables(capsys):
    code, out, _ = run(capsys, "simulate", "--N", "4", "--eps", "0.1", "--time", "3000", "--replicas", "2",
                       "--seed", "5", "--format", "json")
    rep = json.loads(out)
    assert code == 0
    cols = rep["columns"]
    assert all(r[cols.index("kmc_stderr")] > 0 for r in rep["rows"])
    assert all(r[cols.index("exact_density")] is None for r in rep["rows"])
    assert [b["bond"] for b in rep["diagnostics"]["bonds"]] == ["1-2", "2-3", "3-4"]


# verify

def test_verify_default_passes(capsys, tmp_path):
    out = tmp_path / "verify.json"
    code, _, err = run(capsys, "verify", "--nmax", "30", "--out", str(out), "--format", "json")
    rep = json.loads(out.read_text())
    assert code == 0, rep["diagnostics"]["failed"]
    assert all(r[1] for r in rep["rows"])


def test_verify_equilibrium_zero_current(capsys, tmp_path):
    out = tmp_path / "v.json"
    code, _, _ = run(capsys, "verify", "--eps", "0", "--nmax", "30", "--out", str(out), "--format", "json")
    rep = json.loads(out.read_text())
    rows = {r[0]: r for r in rep["rows"]}
    assert code == 0
    assert rows["equilibrium_zero_current"][1]
    assert rows["kmc_equilibrium_entropy_production_zero"][1]
    assert rows["equilibrium_entropy_production_zero"][2] <= 1e-10


def test_verify_negative_control(capsys, tmp_path):
    out = tmp_path / "v.json"
    code, _, err = run(capsys, "verify", "--nmax", "30", "--time", "0", "--corrupt-coefficients", "0.01",
                       "--out", str(out), "--format", "json")
    rep = json.loads(out.read_text())
    assert code == 1
    assert rep["diagnostics"]["failed"] == ["mclennan_generator_identity"]


# configuration and output

def test_config_file_precedence(tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("# model\nN = 5\nm = 2.0\neps = 0.1\nseed = 4\n")
    file_values = cli.read_config_file(conf)
    cfg = cli.resolve_config("profile", {"N": 4, "m": None}, file_values)
    assert (cfg.N, cfg.m, cfg.eps, cfg.seed, cfg.b, cfg.d) == (4, 2.0, 0.1, 4, 1.0, 2.0)


def test_config_file_errors(tmp_path):
    conf = tmp_path / "bad.conf"
    conf.write_text("colour = red\n")
    with pytest.raises(ParameterError):
        cli.read_config_file(conf)
    conf.write_text("N 3\n")
    with pytest.raises(ParameterError):
        cli.read_config_file(conf)


def test_config_flag_via_cli(capsys, tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("N = 4\nformat = json\n")
    code, out, _ = run(capsys, "profile", "--config", str(conf))
    assert code == 0 and len(json.loads(out)["rows"]) == 4


def test_output_dir_environment(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_DIR_ENV, str(tmp_path))
    code, out, err = run(capsys, "profile", "--eps", "0.02")
    assert code == 0 and out == ""
    assert (tmp_path / "profile.csv").exists() and (tmp_path / "profile.json").exists()


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_round_trip(capsys, tmp_path, fmt):
    path = tmp_path / f"sim.{fmt}"
    code, _, _ = run(capsys, "simulate", "--time", "2000", "--seed", "3", "--eps", "0.1", "--out", str(path),
                     "--format", fmt)
    assert code == 0
    back = read_report(path, fmt)
    again = tmp_path / f"again.{fmt}"
    from sipkit.report import write_report
    write_report(back, again, fmt)
    assert again.read_bytes() == path.read_bytes()
    if fmt == "csv":
        assert again.with_suffix(".json").read_bytes() == path.with_suffix(".json").read_bytes()


def test_csv_floats_are_lossless():
    vals = [0.1, 1 / 3, 2.0**-60, 1e300, -7.25]
    rep = Report("x", ("site", "kmc_density"), [{"site": i, "kmc_density": v} for i, v in enumerate(vals)])
    rows = parse_csv(to_csv(rep))[1]
    assert [r["kmc_density"] for r in rows] == vals
    assert Report.from_dict(json.loads(to_json(rep))).rows == rep.rows


@pytest.mark.parametrize("fmt", ["csv", "json"])
def test_identical_config_gives_identical_bytes(capsys, tmp_path, fmt):
    paths = [tmp_path / f"a.{fmt}", tmp_path / f"b.{fmt}"]
    for p in paths:
        code, _, _ = run(capsys, "simulate", "--time", "2000", "--seed", "11", "--replicas", "2",
                         "--out", str(p), "--format", fmt)
        assert code == 0
    assert paths[0].read_bytes() == paths[1].read_bytes()


def test_default_nmax_budget():
    from sipkit.model import ModelParams, perturbed_params
    assert cli.default_nmax(ModelParams.equilibrium(3, 1.0, 1.0, 4.0)) <= 36
    assert (cli.default_nmax(perturbed_params(1.0, 2.0, 0.05, 4, 1.0)) + 1) ** 4 <= cli.DEFAULT_STATE_BUDGET
