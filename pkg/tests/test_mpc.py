"""Online tracking MPC: stage costs, zero-cost equilibrium solves, bounds."""

import numpy as np
import pytest

from adaptmpc.dynamics import DEG, wingrock_model
from adaptmpc.errors import ConfigurationError
from adaptmpc.governor import TighteningSpec, solve_reference
from adaptmpc.mpc import TrackingConfig, solve_tracking, stage_cost, value_function
from adaptmpc.trajopt import SolverOptions


def test_stage_cost_quadratic_forms():
    # unit state deviation under Q = 0.5 I plus unit control deviation
    # under R = 0.5 gives exactly one
    assert stage_cost([1.0, 0.0], [1.0], [0.0, 0.0], [0.0], 0.5 * np.eye(2), 0.5) == 1.0
    assert stage_cost([0.0, 0.0], [0.0], [0.0, 0.0], [0.0], np.eye(2), np.eye(1)) == 0.0
    assert stage_cost([1.0, 2.0], [0.5], [0.0, 0.0], [0.0], np.eye(2), 2.0) == pytest.approx(5.5)


@pytest.fixture(scope="module")
def wr_setup():
    model = wingrock_model(1)
    x0 = np.array([-10.0, 6.0]) * DEG
    plan = solve_reference(
        model, x0, 60, np.eye(2), 0.1 * np.eye(1), TighteningSpec.symmetric()
    )
    cfg = TrackingConfig(
        N=10, Q=np.eye(2), R=0.1 * np.eye(1), Qf=np.eye(2), U=model.U,
        solver=SolverOptions(max_iter=200, ftol=1e-12),
    )
    return model, plan, cfg


def test_equilibrium_solve_is_zero_cost(wr_setup):
    """Past the stored prefix the padded reference sits at the equilibrium, so
    starting there the optimal value and control deviation are both zero."""
    model, plan, cfg = wr_setup
    t = plan.N + 3
    sol = solve_tracking(model, plan.x_e, t, plan, np.zeros(1), cfg)
    assert sol.V_m <= 1e-8
    assert np.allclose(sol.u_m, plan.control(t), atol=1e-5)


def test_value_dominates_state_deviation(wr_setup):
    """V_m >= lambda_min(Q) ||x - x_r||^2 since the first stage cost alone
    already pays that much."""
    model, plan, cfg = wr_setup
    rng = np.random.default_rng(0)
    for _ in range(10):
        t = int(rng.integers(0, plan.N))
        x = model.X.clip(plan.state(t) + rng.uniform(-0.05, 0.05, 2))
        v = value_function(model, x, t, plan, cfg)
        dx = x - plan.state(t)
        assert v >= float(dx @ dx) - 1e-9


def test_total_control_stays_admissible(wr_setup):
    """The MPC box is shifted by the adaptive component so u_m + u_a is in U."""
    model, plan, cfg = wr_setup
    u_a = np.array([55.0])  # large on purpose: leaves only [-115, 5] for u_m
    sol = solve_tracking(model, plan.state(0), 0, plan, u_a, cfg)
    assert model.U.violation(sol.u_m + u_a) <= 1e-12


def test_shifted_warm_start_shape(wr_setup):
    model, plan, cfg = wr_setup
    sol = solve_tracking(model, plan.state(0), 0, plan, np.zeros(1), cfg)
    warm = sol.shifted_warm_start()
    assert warm.shape == sol.controls.shape
    assert np.allclose(warm[:-1], sol.controls[1:])
    assert np.allclose(warm[-1], sol.controls[-1])


def test_value_function_matches_zero_adaptive_solve(wr_setup):
    model, plan, cfg = wr_setup
    x = plan.state(5) + np.array([0.01, -0.01])
    sol = solve_tracking(model, x, 5, plan, np.zeros(1), cfg)
    assert value_function(model, x, 5, plan, cfg) == pytest.approx(sol.V_m, rel=1e-9)


def test_tracking_config_validation():
    model = wingrock_model(1)
    with pytest.raises(ConfigurationError):
        TrackingConfig(N=0, Q=np.eye(2), R=np.eye(1), Qf=np.eye(2), U=model.U)
    cfg = TrackingConfig(N=5, Q=np.eye(2), R=np.eye(1), Qf=np.eye(2), U=model.U)
    assert cfg.u_max == pytest.approx(60.0)
