"""Offline reference governor: constraint tightening and the padded reference.

The governor steers the nominal model from the initial state to the
equilibrium over a fixed horizon under tightened boxes; beyond the stored
prefix the plan is padded with the equilibrium pair.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import Box, SystemModel
from .errors import ConfigurationError, InfeasibleGovernorError
from .trajopt import OcpSpec, SolverOptions, solve_ocp

__all__ = ["TighteningSpec", "ReferencePlan", "tighten", "solve_reference"]


@dataclass(frozen=True)
class TighteningSpec:
    """Box margins for the nominal problem. The adaptive reserve is removed
    from the control box first; margins may be scalars, per-dimension arrays,
    or (lower, upper) pairs of either."""

    state_margin_lower: object = 0.0
    state_margin_upper: object = 0.0
    control_margin_lower: object = 0.0
    control_margin_upper: object = 0.0
    adaptive_reserve: float = 0.0

    @classmethod
    def symmetric(cls, state_margin=0.0, control_margin=0.0, adaptive_reserve=0.0):
        return cls(state_margin, state_margin, control_margin, control_margin, adaptive_reserve)


def tighten(X: Box, U: Box, spec: TighteningSpec):
    """Returns (X_r, U_r); raises ConfigurationError when a box empties."""
    if spec.adaptive_reserve < 0:
        raise ConfigurationError("adaptive reserve must be nonnegative")
    u_prime = U.shrink(spec.adaptive_reserve)
    U_r = u_prime.shrink(spec.control_margin_lower, spec.control_margin_upper)
    X_r = X.shrink(spec.state_margin_lower, spec.state_margin_upper)
    return X_r, U_r


class ReferencePlan:
    """Dynamics-consistent reference prefix plus equilibrium padding; indexing
    beyond the stored horizon returns the equilibrium pair."""

    def __init__(self, states, controls, x_e, u_e, header=None):
        self.states = np.atleast_2d(np.asarray(states, dtype=float))
        self.controls = np.atleast_2d(np.asarray(controls, dtype=float))
        self.x_e = np.atleast_1d(np.asarray(x_e, dtype=float))
        self.u_e = np.atleast_1d(np.asarray(u_e, dtype=float))
        self.header = dict(header or {})
        if self.states.shape[0] != self.controls.shape[0] + 1:
            raise ConfigurationError("plan needs N+1 states for N controls")

    @property
    def N(self) -> int:
        return self.controls.shape[0]

    def state(self, t: int) -> np.ndarray:
        return self.states[t] if t < self.N else self.x_e

    def control(self, t: int) -> np.ndarray:
        return self.controls[t] if t < self.N else self.u_e

    def to_csv(self, path):
        d = self.states.shape[1]
        m = self.controls.shape[1]
        with open(path, "w") as fh:
            for k, v in self.header.items():
                fh.write(f"# {k} = {v}\n")
            fh.write(f"# x_e = {_fmt_vec(self.x_e)}\n")
            fh.write(f"# u_e = {_fmt_vec(self.u_e)}\n")
            cols = ["i"] + [f"x{j}" for j in range(d)] + [f"u{j}" for j in range(m)]
            fh.write(",".join(cols) + "\n")
            for i in range(self.N + 1):
                row = [str(i)] + [_fmt(v) for v in self.states[i]]
                row += [_fmt(v) for v in self.controls[i]] if i < self.N else [""] * m
                fh.write(",".join(row) + "\n")

    @classmethod
    def from_csv(cls, path):
        header = {}
        rows = []
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                if line.startswith("#"):
                    if "=" in line:
                        k, v = line[1:].split("=", 1)
                        header[k.strip()] = v.strip()
                    continue
                if line.startswith("i,"):
                    continue
                rows.append(line.split(","))
        if "x_e" not in header or "u_e" not in header:
            raise ConfigurationError(f"{path}: missing equilibrium header")
        x_e = _parse_vec(header.pop("x_e"))
        u_e = _parse_vec(header.pop("u_e"))
        d = x_e.size
        states = np.array([[float(c) for c in r[1 : 1 + d]] for r in rows])
        controls = np.array(
            [[float(c) for c in r[1 + d :]] for r in rows[:-1]]
        )
        return cls(states, controls, x_e, u_e, header=header)


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def _fmt_vec(v) -> str:
    return " ".join(_fmt(x) for x in np.atleast_1d(v))


def _parse_vec(s: str) -> np.ndarray:
    return np.array([float(tok) for tok in s.split()])


def solve_reference(
    model: SystemModel,
    x0,
    N: int,
    Q,
    R,
    tightening: TighteningSpec,
    options: SolverOptions | None = None,
    consistency_tol: float = 1e-6,
) -> ReferencePlan:
    """Solves the governor problem in equilibrium-shifted coordinates (the
    quadratic costs are centered on the equilibrium pair) and returns the
    padded plan."""
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    if not model.X.contains(x0, tol=1e-9):
        raise ConfigurationError(f"initial state {x0} outside X")
    X_r, U_r = tighten(model.X, model.U, tightening)
    options = options or SolverOptions(max_iter=500)

    x_ref = np.tile(model.x_e, (N + 1, 1))
    u_ref = np.tile(model.u_e, (N, 1))
    spec = OcpSpec(
        N=N,
        x0=x0,
        step=model.step_nominal,
        jac=model.nominal_jac,
        x_ref=x_ref,
        u_ref=u_ref,
        Q=Q,
        R=R,
        Qf=np.zeros((model.d, model.d)),
        control_box=U_r,
        state_box=X_r,
        terminal_target=model.x_e,
    )
    sol = solve_ocp(spec, warm_start=u_ref, options=options)
    if sol.max_violation > consistency_tol:
        raise InfeasibleGovernorError(
            f"governor constraints violated by {sol.max_violation:.3e} "
            f"(> {consistency_tol:.1e}); kkt residual {sol.kkt_residual:.3e}",
            diagnostics={
                "max_violation": sol.max_violation,
                "kkt_residual": sol.kkt_residual,
                "iterations": sol.iterations,
                "value": sol.value,
            },
        )
    plan = ReferencePlan(sol.states, sol.controls, model.x_e, model.u_e)
    plan.header.update(
        {
            "model": model.name,
            "horizon_governor": N,
            "governor_value": _fmt(sol.value),
            "governor_kkt": _fmt(sol.kkt_residual),
            "X_r": f"{_fmt_vec(X_r.lower)} | {_fmt_vec(X_r.upper)}",
            "U_r": f"{_fmt_vec(U_r.lower)} | {_fmt_vec(U_r.upper)}",
        }
    )
    plan.X_r = X_r
    plan.U_r = U_r
    plan.value = sol.value
    return plan
