import json

import pytest

from nlsm_dtheory import cli

TINY_STEP = ["run", "step-scale", "--model", "nn", "--pair", "2:3", "--Ly", "2", "--sweep", "J=0.5:1.0:3"]
TINY_SPIRAL = ["run", "spiral", "--geom", "2x2", "--h-P", "0.3", "--steps", "40", "--max-bond", "16"]


def run(argv, out):
    return cli.main([*argv, "--out", str(out)])


def test_precedence_defaults_file_flags(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('Ly = 4\nmax_bond = 64\n[step-scale]\nmodel = "d6"\n')
    c = cli.load_config("step-scale", str(cfg), {"max_bond": 32})
    assert (c["Ly"], c["model"], c["max_bond"], c["seed"]) == (4, "d6", 32, 0)
    assert c["command"] == "step-scale"


@pytest.mark.parametrize("text, fragment", [
    ('Ly = 2\nbogus = 1\n', "line 2, column 1: unknown key 'bogus'"),
    ('Ly = 2\nmodel = "xy"\n', "line 2, column 1: model='xy' is not one of"),
    ('pair = ["2:3"]\n  Ly = "two"\n', "line 2, column 3: Ly must be int"),
    ('Ly = 2\nmodel = nn\n', "(at line 2, column 9)"),
])
def test_config_errors_carry_positions(tmp_path, capsys, text, fragment):
    cfg = tmp_path / "c.toml"
    cfg.write_text(text)
    with pytest.raises(cli.ConfigError, match="c.toml"):
        cli.load_config("step-scale", str(cfg))
    assert cli.main(["run", "step-scale", "--config", str(cfg)]) == cli.EXIT_CONFIG
    assert fragment in capsys.readouterr().err


def test_flag_errors_exit_with_config_code(tmp_path):
    assert run(["run", "step-scale", "--pair", "3:2"], tmp_path) == cli.EXIT_CONFIG
    assert run(["run", "step-scale", "--sweep", "rho=0.1:1:3"], tmp_path) == cli.EXIT_CONFIG
    assert run(["run", "mc-reference", "--Lx", "5"], tmp_path) == cli.EXIT_CONFIG
    assert run(["run", "spiral", "--geom", "2x2"], tmp_path) == cli.EXIT_CONFIG
    assert run(["run", "perturbative", "--s", "0"], tmp_path) == cli.EXIT_CONFIG


def test_step_scale_outputs_and_determinism(tmp_path):
    assert run(TINY_STEP, tmp_path / "a") == cli.EXIT_OK
    assert run([*TINY_STEP, "--workers", "2"], tmp_path / "b") == cli.EXIT_OK
    rows = cli.read_csv(tmp_path / "a" / "step_scale.csv")
    assert [r["value"] for r in rows] == ["0.5", "0.75", "1.0"]
    assert all(r["converged"] == "true" and r["status"] == "ok" for r in rows)
    # 2x2 NN at J=1 is the analytic diag(4,1) coupling
    assert float(rows[2]["z"]) == pytest.approx(0.72824, abs=1e-5)
    text = (tmp_path / "a" / "step_scale.csv").read_text()
    conf = json.loads(text.splitlines()[0].removeprefix("# config: "))
    assert conf["pair"] == ["2:3"] and conf["seed"] == 0
    first = text
    assert run(TINY_STEP, tmp_path / "a") == cli.EXIT_OK
    assert (tmp_path / "a" / "step_scale.csv").read_text() == first
    body = lambda p: p.read_text().split("\n", 2)[2]  # noqa: E731
    assert body(tmp_path / "a" / "step_scale.csv") == body(tmp_path / "b" / "step_scale.csv")
    svg = (tmp_path / "a" / "step_scale.svg").read_text()
    assert svg.startswith("<?xml") and "step-scale" in svg


def test_unconverged_points_are_flagged(tmp_path):
    argv = ["run", "step-scale", "--pair", "4:6", "--Ly", "2", "--sweep", "J=1:1:1", "--max-sweeps", "1"]
    assert run(argv, tmp_path) == cli.EXIT_CONVERGENCE
    rows = cli.read_csv(tmp_path / "step_scale.csv")
    assert rows[0]["converged"] == "false" and rows[0]["status"] != "ok"
    assert not (tmp_path / "step_scale.svg").exists()


def test_cache_reuse_is_byte_identical(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.CACHE_ENV, str(tmp_path / "cache"))
    assert run(TINY_STEP, tmp_path / "a") == cli.EXIT_OK
    n_cached = len(list((tmp_path / "cache").glob("vacuum-*.json")))
    assert n_cached == 6
    first = (tmp_path / "a" / "step_scale.csv").read_bytes()
    assert run(TINY_STEP, tmp_path / "a") == cli.EXIT_OK
    assert (tmp_path / "a" / "step_scale.csv").read_bytes() == first


def test_spiral_outputs_and_determinism(tmp_path):
    argv = [*TINY_SPIRAL, "--shots", "300", "--n-resamples", "200", "--seed", "4"]
    assert run(argv, tmp_path / "a") == cli.EXIT_OK
    assert run(argv, tmp_path / "b") == cli.EXIT_OK
    for name in ("spiral.csv", "trajectory.csv"):
        a = (tmp_path / "a" / name).read_text().split("\n", 2)[2]
        assert a == (tmp_path / "b" / name).read_text().split("\n", 2)[2]
    row = cli.read_csv(tmp_path / "a" / "spiral.csv")[0]
    assert row["reference"] == "exact" and float(row["gbar_err"]) > 0
    assert json.loads((tmp_path / "a" / "schedule.json").read_text())["parameters"]["h_P"] == "0.3"


def test_spiral_budget_error_surfaces_verbatim(tmp_path, capsys):
    assert run([*TINY_SPIRAL, "--T", "3.9"], tmp_path) == cli.EXIT_BUDGET
    assert "BudgetError: schedule needs 4.0700 us, budget is 4.0000 us" in capsys.readouterr().err
    assert run([*TINY_SPIRAL, "--omega-D", "20"], tmp_path) == cli.EXIT_BUDGET


def test_two_shots_warn_about_bootstrap_degeneracy(tmp_path, capsys):
    argv = [*TINY_SPIRAL, "--shots", "2", "--n-resamples", "100", "--seed", "1"]
    assert run(argv, tmp_path) == cli.EXIT_OK
    assert "bootstrap resamples had a degenerate spectrum" in capsys.readouterr().err


def test_spiral_optimize_picks_grid_point(tmp_path):
    argv = [*TINY_SPIRAL, "--shots", "0", "--optimize", "true", "--grid", "0.2,0.4"]
    assert run(argv, tmp_path) == cli.EXIT_OK
    row = cli.read_csv(tmp_path / "spiral.csv")[0]
    assert float(row["h_P"]) in (0.2, 0.4) or 0.2 < float(row["h_P"]) < 0.4
    assert float(row["target_gbar"]) > 0


def test_mc_reference_short_run_reports_errors(tmp_path):
    argv = ["run", "mc-reference", "--Lx", "3", "--g-bare", "0.8,1.2", "--n-therm", "50", "--n-meas", "1000"]
    assert run(argv, tmp_path) == cli.EXIT_OK
    rows = cli.read_csv(tmp_path / "mc_reference.csv")
    assert [r["status"] for r in rows] == ["ok", "ok"]
    assert all(float(r["z_err"]) > 0 and float(r["F_err"]) > 0 for r in rows)
    first = (tmp_path / "mc_reference.csv").read_bytes()
    assert run(argv, tmp_path) == cli.EXIT_OK
    assert (tmp_path / "mc_reference.csv").read_bytes() == first


def test_perturbative_table_monotone(tmp_path):
    assert run(["run", "perturbative"], tmp_path) == cli.EXIT_OK
    rows = [r for r in cli.read_csv(tmp_path / "perturbative.csv") if r["valid"] == "true"]
    F = [float(r["F"]) for r in rows]
    assert len(F) > 10
    assert all(b > a for a, b in zip(F, F[1:]))


def test_oracle_suite_on_4x4(tmp_path):
    assert run(["run", "oracle-suite", "--lattices", "4x4"], tmp_path) == cli.EXIT_OK
    row = cli.read_csv(tmp_path / "oracle_suite.csv")[0]
    assert row["pass"] == "true" and float(row["E0_rel"]) < 1e-8
