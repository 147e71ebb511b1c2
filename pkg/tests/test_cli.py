"""Command-line interface: subcommands, outputs and exit codes."""

import numpy as np
import pytest

from adaptmpc import cli
from adaptmpc.errors import DivergenceError
from adaptmpc.orchestrator import AgentResult, load_simlog


@pytest.fixture()
def tiny_cfg(tmp_path):
    """A wing-rock setup small enough for sub-second CLI runs."""
    p = tmp_path / "tiny.cfg"
    p.write_text(
        "model = wingrock:1\n"
        "steps = 6\n"
        "horizon_governor = 60\n"
        "horizon_online = 8\n"
        "state_margin = 0\n"
        "control_margin = 0\n"
        "adaptive_reserve = 0\n"
    )
    return p


def test_governor_writes_reference(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "out"
    rc = cli.main(["governor", "--config", str(tiny_cfg), "--out", str(out)])
    assert rc == 0
    assert (out / "wingrock1_reference.csv").exists()
    assert "terminal error" in capsys.readouterr().out


def test_run_writes_log_and_figures(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", str(tiny_cfg), "--out", str(out)])
    assert rc == 0
    log_path = out / "wingrock1_run.csv"
    assert log_path.exists()
    assert (out / "wingrock1_reference.csv").exists()
    assert list(out.glob("wingrock1_run*.svg"))
    log = load_simlog(log_path)
    assert log.steps == 6
    assert log.header["adaptation"] == "on"
    assert "pass" in capsys.readouterr().out


def test_check_on_saved_log(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["run", "--config", str(tiny_cfg), "--out", str(out)]) == 0
    rc = cli.main(["check", str(out / "wingrock1_run.csv")])
    assert rc == 0
    assert "va_descent" in capsys.readouterr().out


def test_check_rejects_non_log_files(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "out"
    assert cli.main(["governor", "--config", str(tiny_cfg), "--out", str(out)]) == 0
    # a reference CSV is not a simulation log
    assert cli.main(["check", str(out / "wingrock1_reference.csv")]) == 5
    assert cli.main(["check", str(out / "missing.csv")]) == 5


def test_bad_config_exits_5(tmp_path):
    p = tmp_path / "bad.cfg"
    p.write_text("unknown_key = 1\n")
    assert cli.main(["run", "--config", str(p)]) == 5
    assert cli.main(["run", "--model", "pendulum", "--steps", "1"]) == 5


def test_infeasible_governor_exits_2(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "out"
    rc = cli.main(
        ["governor", "--config", str(tiny_cfg), "--out", str(out),
         "--model", "wingrock:1"]
        + []
    )
    assert rc == 0
    p = tmp_path / "tight.cfg"
    p.write_text(tiny_cfg.read_text().replace("adaptive_reserve = 0", "adaptive_reserve = 59.5")
                 .replace("horizon_governor = 60", "horizon_governor = 5"))
    rc = cli.main(["governor", "--config", str(p), "--out", str(out)])
    assert rc == 2
    assert "infeasible" in capsys.readouterr().err


def test_strict_invariant_failure_exits_4(tiny_cfg, tmp_path):
    out = tmp_path / "out"
    p = tmp_path / "strict.cfg"
    # an unreachable residual threshold turns the convergence check into a
    # guaranteed failure on this short run
    p.write_text(tiny_cfg.read_text() + "residual_threshold = 1e-12\n")
    assert cli.main(["run", "--config", str(p), "--out", str(out)]) == 0
    assert cli.main(["run", "--config", str(p), "--out", str(out), "--strict"]) == 4


def test_divergence_exits_3(tiny_cfg, tmp_path, monkeypatch, capsys):
    out = tmp_path / "out"

    def fake_run(agents, parallel=False):
        return [AgentResult(None, DivergenceError("state blew up", step=2))]

    monkeypatch.setattr(cli, "run_multi_agent", fake_run)
    rc = cli.main(["run", "--config", str(tiny_cfg), "--out", str(out)])
    assert rc == 3
    assert "step 2" in capsys.readouterr().err


def test_compare_writes_metrics(tiny_cfg, tmp_path, capsys):
    out = tmp_path / "out"
    rc = cli.main(["compare", "--config", str(tiny_cfg), "--out", str(out)])
    assert rc == 0
    assert (out / "wingrock1_on_run.csv").exists()
    assert (out / "wingrock1_off_run.csv").exists()
    metrics = out / "wingrock1_metrics.csv"
    assert metrics.exists()
    body = metrics.read_text().splitlines()
    assert body[0] == "metric,adaptive,mpc_only"
    assert any(line.startswith("final_error,") for line in body)


def test_multi_agent_run(tiny_cfg, tmp_path):
    out = tmp_path / "out"
    rc = cli.main(
        ["run", "--config", str(tiny_cfg), "--out", str(out),
         "--model", "wingrock:1,wingrock:2", "--parallel-agents"]
    )
    assert rc == 0
    assert (out / "wingrock1_run.csv").exists()
    assert (out / "wingrock2_run.csv").exists()


def test_zero_step_run(tiny_cfg, tmp_path):
    out = tmp_path / "out"
    rc = cli.main(["run", "--config", str(tiny_cfg), "--out", str(out), "--steps", "0"])
    assert rc == 0
    log = load_simlog(out / "wingrock1_run.csv")
    assert log.steps == 0
    assert log.states.shape == (1, 2)


def test_adaptation_flag_overrides(tiny_cfg, tmp_path):
    out = tmp_path / "out"
    rc = cli.main(
        ["run", "--config", str(tiny_cfg), "--out", str(out), "--adaptation", "off",
         "--steps", "4"]
    )
    assert rc == 0
    log = load_simlog(out / "wingrock1_run.csv")
    assert log.steps == 4
    assert log.header["adaptation"] == "off"
    assert np.all(log.u_a == 0.0)
