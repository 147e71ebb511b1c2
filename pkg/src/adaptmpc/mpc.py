"""Online reference-tracking MPC with value-function diagnostics.

Each solve minimizes quadratic tracking costs along the padded reference plus
a terminal cost around the equilibrium; the control box is shifted by the
current adaptive component so the applied total control stays admissible.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import Box, SystemModel
from .errors import ConfigurationError
from .governor import ReferencePlan
from .trajopt import OcpSpec, OcpSolution, SolverOptions, solve_ocp

__all__ = ["TrackingConfig", "TrackingSolution", "stage_cost", "solve_tracking", "value_function"]


@dataclass(frozen=True)
class TrackingConfig:
    N: int
    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray
    U: Box
    solver: SolverOptions = SolverOptions(max_iter=200)

    def __post_init__(self):
        object.__setattr__(self, "Q", np.atleast_2d(np.asarray(self.Q, dtype=float)))
        object.__setattr__(self, "R", np.atleast_2d(np.asarray(self.R, dtype=float)))
        object.__setattr__(self, "Qf", np.atleast_2d(np.asarray(self.Qf, dtype=float)))
        if self.N < 1:
            raise ConfigurationError("online horizon must be at least 1")

    @property
    def u_max(self) -> float:
        return float(np.max(np.abs(np.stack([self.U.lower, self.U.upper]))))


@dataclass
class TrackingSolution:
    u_m: np.ndarray  # first control of the optimal sequence
    controls: np.ndarray
    predicted_states: np.ndarray
    V_m: float
    predicted_next: np.ndarray
    iterations: int
    converged: bool
    kkt_residual: float

    def shifted_warm_start(self) -> np.ndarray:
        """Shift-and-repeat warm start for the next step."""
        return np.vstack([self.controls[1:], self.controls[-1:]])


def stage_cost(x, u, x_r, u_r, Q, R) -> float:
    dx = np.asarray(x, dtype=float) - np.asarray(x_r, dtype=float)
    du = np.asarray(u, dtype=float) - np.asarray(u_r, dtype=float)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    return float(dx @ Q @ dx + du @ R @ du)


def solve_tracking(
    model: SystemModel,
    x_t,
    t: int,
    plan: ReferencePlan,
    u_a,
    cfg: TrackingConfig,
    warm=None,
    adaptive_state=None,
) -> TrackingSolution:
    """Solve the online problem at time t; the predicted controls are the MPC
    components, constrained so that (control + u_a) lies in U.

    When `adaptive_state` is given, the box shift is predicted per stage from
    the current weights and the feature sequence (exact for time-indexed
    bases; frozen at the measured state otherwise), so the planner does not
    extrapolate the instantaneous adaptive component over the whole horizon."""
    x_t = np.atleast_1d(np.asarray(x_t, dtype=float))
    u_a = np.atleast_1d(np.asarray(u_a, dtype=float))
    N = cfg.N
    x_ref = np.array([plan.state(t + i) for i in range(N + 1)])
    u_ref = np.array([plan.control(t + i) for i in range(N)])
    if adaptive_state is not None:
        u_a_seq = np.array(
            [adaptive_state.K @ model.feature(x_t, t + i) for i in range(N)]
        )
        u_a_seq[0] = u_a
    else:
        u_a_seq = np.tile(u_a, (N, 1))
    lower = cfg.U.lower - u_a_seq
    upper = cfg.U.upper - u_a_seq
    spec = OcpSpec(
        N=N,
        x0=x_t,
        step=model.step_nominal,
        jac=model.nominal_jac,
        x_ref=x_ref,
        u_ref=u_ref,
        Q=cfg.Q,
        R=cfg.R,
        Qf=cfg.Qf,
        terminal_ref=plan.x_e,
        control_lower=lower,
        control_upper=upper,
    )
    if warm is None:
        warm = np.clip(u_ref, lower, upper)
    sol: OcpSolution = solve_ocp(spec, warm_start=warm, options=cfg.solver)
    return TrackingSolution(
        u_m=sol.controls[0].copy(),
        controls=sol.controls,
        predicted_states=sol.states,
        V_m=sol.value,
        predicted_next=sol.states[1].copy(),
        iterations=sol.iterations,
        converged=sol.converged,
        kkt_residual=sol.kkt_residual,
    )


def value_function(model: SystemModel, x_t, t: int, plan: ReferencePlan, cfg: TrackingConfig) -> float:
    """Optimal tracking value with a zero adaptive component (diagnostics)."""
    return solve_tracking(model, x_t, t, plan, np.zeros(model.m), cfg).V_m
