"""Shared fixtures: full benchmark runs are expensive, so they are produced
once per session and reused by the unit and acceptance tests."""

import time
from dataclasses import dataclass

import numpy as np
import pytest

from adaptmpc.config import ExperimentConfig, resolve_config
from adaptmpc.governor import solve_reference
from adaptmpc.orchestrator import run_closed_loop

# (criterion number, label, passed, detail) tuples collected by the
# acceptance tests and echoed in the terminal summary
ACCEPTANCE_RESULTS = []


def record_acceptance(number, label, passed, detail=""):
    line = f"criterion {number:2d} ({label}): {'PASS' if passed else 'FAIL'}"
    if detail:
        line += f"  [{detail}]"
    ACCEPTANCE_RESULTS.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_RESULTS:
            terminalreporter.write_line(line)


@dataclass
class Experiment:
    cfg: object
    model: object
    plan: object
    log: object
    elapsed: float

    def tracking_error(self):
        T = self.log.steps
        return np.array(
            [np.linalg.norm(self.log.states[t] - self.plan.state(t)) for t in range(T + 1)]
        )


def run_experiment(**overrides):
    raw = resolve_config(overrides={k: str(v) for k, v in overrides.items()})
    cfg = ExperimentConfig.from_raw(raw)
    t0 = time.perf_counter()
    model = cfg.build_model()
    plan = solve_reference(
        model,
        cfg.x0,
        cfg.horizon_governor,
        cfg.Q,
        cfg.R,
        cfg.tightening(),
        options=cfg.governor_options(),
    )
    log = run_closed_loop(model, plan, cfg.tracking_config(model), cfg.loop_config())
    return Experiment(cfg, model, plan, log, time.perf_counter() - t0)


@pytest.fixture(scope="session")
def cstr_runs():
    t0 = time.perf_counter()
    runs = {
        "on": run_experiment(model="cstr", adaptation="on"),
        "off": run_experiment(model="cstr", adaptation="off"),
    }
    runs["total_seconds"] = time.perf_counter() - t0
    return runs


@pytest.fixture(scope="session")
def wingrock_runs():
    t0 = time.perf_counter()
    runs = {
        (agent, adapt): run_experiment(model=f"wingrock:{agent}", adaptation=adapt)
        for agent in (1, 2)
        for adapt in ("on", "off")
    }
    runs["total_seconds"] = time.perf_counter() - t0
    return runs


@pytest.fixture(scope="session")
def adaptive_experiments(cstr_runs, wingrock_runs):
    """All adaptation-on benchmark runs keyed by a short label."""
    return {
        "cstr": cstr_runs["on"],
        "wingrock:1": wingrock_runs[(1, "on")],
        "wingrock:2": wingrock_runs[(2, "on")],
    }


@pytest.fixture(scope="session")
def all_experiments(cstr_runs, wingrock_runs):
    out = {"cstr/on": cstr_runs["on"], "cstr/off": cstr_runs["off"]}
    for key, exp in wingrock_runs.items():
        if isinstance(exp, Experiment):
            out[f"wingrock:{key[0]}/{key[1]}"] = exp
    return out
