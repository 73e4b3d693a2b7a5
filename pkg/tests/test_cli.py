import numpy as np
import pandas as pd
import pytest

from multicac import config
from multicac.cli import main
from multicac.constants import EXIT_CONFIG, EXIT_MODEL, EXIT_OK, EXIT_VERIFY, SERIES_COLUMNS
from multicac.models import Grid, PhaseField
from multicac.services import checkpoint, diagnostics, experiment, verify

BINARY = """
[grid]
dim = 1
shape = 32
extent = 1.0

[model]
n_phases = 2
gamma = 0.05
chi = 3.0

[solver]
dt = 1e-2
t_end = 0.5
init = step
amplitude = 0.1
mean = 0.5, 0.5

[output]
cadence = 10
"""

QUENCH = """
[grid]
shape = 32

[model]
n_phases = 3
gamma = 1e-4
chi = 6.0
epsilon = 0

[solver]
dt = 100
stabilization = 0
t_end = 1000
amplitude = 0.3
seed = 1
"""


@pytest.fixture()
def binary_config(tmp_path):
    path = tmp_path / "binary.ini"
    path.write_text(BINARY)
    return path


def test_run_writes_all_outputs(tmp_path, binary_config):
    out = tmp_path / "run"
    assert main(["run", "--config", str(binary_config), "--out", str(out)]) == EXIT_OK
    for name in ("series.csv", "summary.txt", "final_state.mcac", "config_resolved.json"):
        assert (out / name).is_file()
    series = pd.read_csv(out / "series.csv")
    assert tuple(series.columns) == SERIES_COLUMNS
    # 50 steps at cadence 10 plus the initial row
    assert len(series) == 50 // 10 + 1
    assert series["mean_drift_max"].max() < 1e-11
    assert (series["total_energy"].diff().dropna() <= 1e-12).all()
    final = checkpoint.read_checkpoint(out / "final_state.mcac")
    assert final.step_count == 50
    assert "status = reached_t_end" in (out / "summary.txt").read_text()


def test_repeated_runs_are_byte_identical(tmp_path, binary_config):
    for name in ("a", "b"):
        assert main(["run", "--config", str(binary_config), "--out", str(tmp_path / name)]) == EXIT_OK
    assert (tmp_path / "a" / "series.csv").read_bytes() == (tmp_path / "b" / "series.csv").read_bytes()
    assert (tmp_path / "a" / "final_state.mcac").read_bytes() == (tmp_path / "b" / "final_state.mcac").read_bytes()


def test_restart_continues_the_step_count(tmp_path, binary_config):
    first = tmp_path / "first"
    assert main(["run", "--config", str(binary_config), "--out", str(first)]) == EXIT_OK
    second = tmp_path / "second"
    code = main(["run", "--config", str(binary_config), "--out", str(second),
                 "--set", "solver.t_end=1.0", "--restart", str(first / "final_state.mcac")])
    assert code == EXIT_OK
    final = checkpoint.read_checkpoint(second / "final_state.mcac")
    assert final.step_count == 100
    assert final.t == pytest.approx(1.0)


def test_overrides_from_the_command_line(tmp_path, binary_config):
    out = tmp_path / "short"
    assert main(["run", "--config", str(binary_config), "--out", str(out), "--set", "solver.t_end=0.1"]) == EXIT_OK
    assert checkpoint.read_checkpoint(out / "final_state.mcac").step_count == 10


def test_bad_config_exits_with_config_code(tmp_path, capsys):
    path = tmp_path / "bad.ini"
    path.write_text("[model]\nn_phases = 3\ngamma = 1e-3\nxi = -1\n")
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert "model.xi" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "absent.ini"), "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_unregularized_blow_up_exits_with_model_code(tmp_path, capsys):
    path = tmp_path / "quench.ini"
    path.write_text(QUENCH)
    assert main(["run", "--config", str(path), "--out", str(tmp_path / "quench")]) == EXIT_MODEL
    assert "component" in capsys.readouterr().err


def test_verify_lemmas(capsys):
    assert main(["verify", "lemmas"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "FAIL" not in out
    assert "0 failed" in out


def test_sweep_epsilon(tmp_path, binary_config):
    out = tmp_path / "sweep"
    code = main(["sweep-epsilon", "--config", str(binary_config), "--out", str(out),
                 "--set", "solver.t_end=0.1", "--epsilons", "1e-2,1e-3"])
    assert code == EXIT_OK
    table = pd.read_csv(out / "sweep.csv")
    assert list(table.columns) == ["epsilon", "final_energy", "separation_floor", "psi_deviation"]
    assert len(table) == 2
    assert table["psi_deviation"].iloc[0] > table["psi_deviation"].iloc[1] > 0
    assert (out / "eps_00" / "series.csv").is_file()
    assert (out / "eps_01" / "summary.txt").is_file()


def test_sweep_rejects_negative_epsilon(tmp_path, binary_config):
    code = main(["sweep-epsilon", "--config", str(binary_config), "--out", str(tmp_path / "s"),
                 "--epsilons", "1e-2,-1"])
    assert code == EXIT_CONFIG


def test_restart_from_an_invalid_checkpoint_is_refused(tmp_path, binary_config, capsys):
    grid = Grid.uniform((32,), (1.0,))
    broken = checkpoint.Checkpoint(u=PhaseField(grid, np.full((2, 32), 0.9)), t=0.1, step_count=10,
                                   gamma=0.05, theta=1.0, epsilon=1e-4, xi=1.0)
    path = checkpoint.write_checkpoint(tmp_path / "broken.mcac", broken)
    code = main(["run", "--config", str(binary_config), "--out", str(tmp_path / "x"), "--restart", str(path)])
    assert code == EXIT_CONFIG
    assert "sum" in capsys.readouterr().err
    assert not (tmp_path / "x" / "series.csv").exists()


@pytest.mark.parametrize("suite", ["potential", "discretization", "simplex"])
def test_verify_fast_suites(suite, capsys):
    assert main(["verify", suite]) == EXIT_OK
    out = capsys.readouterr().out
    assert f"[{suite}]" in out
    assert "FAIL" not in out


def test_verify_reports_failures_with_verify_code(monkeypatch, capsys):
    def broken():
        return [verify.PropertyResult(suite="lemmas", name="always fails", passed=False, detail="forced")]

    monkeypatch.setitem(verify._RUNNERS, "lemmas", broken)
    assert main(["verify", "lemmas"]) == EXIT_VERIFY
    out = capsys.readouterr().out
    assert "FAIL  [lemmas] always fails  (forced)" in out
    assert "0 passed, 1 failed" in out


def test_verify_all_runs_every_suite(monkeypatch, capsys):
    for name in verify.SUITES:
        monkeypatch.setitem(verify._RUNNERS, name, lambda name=name: [verify.PropertyResult(suite=name, name="ok", passed=True)])
    assert main(["verify"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in verify.SUITES:
        assert f"PASS  [{name}] ok" in out
    assert f"{len(verify.SUITES)} passed, 0 failed" in out


def test_unknown_suite_is_rejected():
    with pytest.raises(ValueError):
        verify.run_suite("everything")
    with pytest.raises(SystemExit):
        main(["verify", "everything"])


def test_summary_energy_is_taken_from_the_final_state(tmp_path, binary_config):
    cfg = config.load_config(binary_config, ["output.cadence=7"])
    outcome = experiment.execute(cfg, tmp_path / "run")
    assert outcome.state.step_count == 50
    f = experiment.build_free_energy(cfg)
    final = diagnostics.energy(outcome.state.u, f, cfg.model.gamma).total
    assert outcome.summary["run"]["final_energy"] == final
    # the last cadence sample is step 49
    series = pd.read_csv(tmp_path / "run" / "series.csv", float_precision="round_trip")
    assert series["total_energy"].iloc[-1] != final
    assert "final_energy = %.17g\n" % final in (tmp_path / "run" / "summary.txt").read_text()


def test_checkpoint_header_records_the_stepped_model(tmp_path, binary_config):
    out = tmp_path / "header"
    code = main(["run", "--config", str(binary_config), "--out", str(out), "--set", "solver.t_end=0.05",
                 "--set", "model.epsilon=1e-3", "--set", "model.xi=0.5", "--set", "model.theta=0.9"])
    assert code == EXIT_OK
    final = checkpoint.read_checkpoint(out / "final_state.mcac")
    assert (final.epsilon, final.xi, final.theta, final.gamma) == (1e-3, 0.5, 0.9, 0.05)


def test_exact_entropy_run_records_zero_epsilon(tmp_path, binary_config):
    cfg = config.load_config(binary_config, ["solver.t_end=0.02", "model.epsilon=0"])
    outcome = experiment.execute(cfg, tmp_path / "exact")
    assert checkpoint.read_checkpoint(outcome.out_dir / "final_state.mcac").epsilon == 0.0
