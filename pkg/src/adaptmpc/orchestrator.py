"""Closed-loop execution and invariant checking.

The loop follows the per-step protocol exactly: adaptive component from the
current weights, tracking solve for the MPC component, apply the sum to the
real plant, measure, then update the weights from the measured successor.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import adaptive as ad
from .dynamics import Box, SystemModel
from .errors import ConfigurationError, DivergenceError
from .governor import ReferencePlan
from .mpc import TrackingConfig, solve_tracking, stage_cost
from .trajopt import SolverOptions

__all__ = [
    "LoopConfig",
    "SimLog",
    "InvariantConfig",
    "InvariantReport",
    "run_closed_loop",
    "run_multi_agent",
    "check_invariants",
    "save_simlog",
    "load_simlog",
]


@dataclass(frozen=True)
class LoopConfig:
    steps: int
    adaptation: bool
    gamma: object = 1.5
    epsilon: float = 1.0
    g_zero_tol: float = 1e-9
    safety_factor: float = 2.0
    membership_tol: float = 1e-9


@dataclass
class SimLog:
    """Per-step closed-loop record. Arrays hold steps+1 states and V_a values
    and `steps` entries for the per-step quantities."""

    header: dict
    states: np.ndarray
    u_m: np.ndarray
    u_a: np.ndarray
    u: np.ndarray
    V_m: np.ndarray
    V_a: np.ndarray
    K_tilde_fro: np.ndarray
    residual: np.ndarray
    iters: np.ndarray
    control_violation: np.ndarray = field(default=None)
    state_violation: np.ndarray = field(default=None)

    @property
    def steps(self) -> int:
        return self.states.shape[0] - 1


def _safety_box(X: Box, factor: float) -> Box:
    center = 0.5 * (X.lower + X.upper)
    hw = factor * X.half_width
    return Box(center - hw, center + hw)


def run_closed_loop(
    model: SystemModel,
    plan: ReferencePlan,
    tracking: TrackingConfig,
    loop: LoopConfig,
    header: dict | None = None,
) -> SimLog:
    """Execute the closed loop from plan.state(0) for loop.steps steps."""
    T = loop.steps
    d, m = model.d, model.m
    state = ad.AdaptiveState.initial(m, model.q, loop.gamma, loop.epsilon, loop.g_zero_tol)
    x = plan.state(0).copy()
    safety = _safety_box(model.X, loop.safety_factor)

    log = SimLog(
        header=dict(header or {}),
        states=np.empty((T + 1, d)),
        u_m=np.empty((T, m)),
        u_a=np.empty((T, m)),
        u=np.empty((T, m)),
        V_m=np.empty(T),
        V_a=np.empty(T + 1),
        K_tilde_fro=np.empty(T + 1),
        residual=np.empty(T),
        iters=np.empty(T, dtype=int),
        control_violation=np.zeros(T, dtype=bool),
        state_violation=np.zeros(T + 1, dtype=bool),
    )
    log.header.setdefault("model", model.name)
    log.header.setdefault("adaptation", "on" if loop.adaptation else "off")
    log.header.setdefault("steps", T)

    warm = None
    log.states[0] = x
    log.state_violation[0] = not model.X.contains(x, tol=loop.membership_tol)
    for t in range(T):
        feature = model.feature(x, t)
        u_a = ad.adaptive_control(state, feature)
        try:
            sol = solve_tracking(
                model, x, t, plan, u_a, tracking, warm,
                adaptive_state=state if loop.adaptation else None,
            )
        except DivergenceError as exc:
            raise DivergenceError(f"tracking solve diverged at step {t}: {exc}", step=t)
        u_m = sol.u_m
        u = u_m + u_a
        x_next = model.step_true(x, u, t)

        diag = ad.diagnostics(state, model, x, t)
        log.u_m[t] = u_m
        log.u_a[t] = u_a
        log.u[t] = u
        log.V_m[t] = sol.V_m
        log.V_a[t] = diag.V_a
        log.K_tilde_fro[t] = diag.K_tilde_norm
        log.residual[t] = diag.residual_norm
        log.iters[t] = sol.iterations
        log.control_violation[t] = not model.U.contains(u, tol=loop.membership_tol)
        log.state_violation[t + 1] = not model.X.contains(x_next, tol=loop.membership_tol)

        if loop.adaptation:
            state = ad.weight_update(state, model, x, u_m, x_next, feature)
        if not np.all(np.isfinite(x_next)) or not safety.contains(x_next):
            raise DivergenceError(
                f"state left the safety box at step {t + 1}: {x_next}", step=t + 1
            )
        log.states[t + 1] = x_next
        warm = sol.shifted_warm_start()
        x = x_next

    final = ad.diagnostics(state, model, x, T)
    log.V_a[T] = final.V_a
    log.K_tilde_fro[T] = final.K_tilde_norm
    return log


@dataclass
class AgentResult:
    log: SimLog | None
    error: Exception | None = None


def run_multi_agent(agents, parallel: bool = False) -> list:
    """Run independent agents; each entry of `agents` is
    (model, plan, tracking, loop, header). Results keep the input order and
    per-agent failures do not abort the others."""

    def one(args):
        model, plan, tracking, loop, header = args
        try:
            return AgentResult(run_closed_loop(model, plan, tracking, loop, header))
        except Exception as exc:  # noqa: BLE001 - reported to the caller
            return AgentResult(None, exc)

    if parallel:
        with ThreadPoolExecutor(max_workers=len(agents)) as pool:
            return list(pool.map(one, agents))
    return [one(a) for a in agents]


# ---------------------------------------------------------------------------
# Invariant checking
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class InvariantConfig:
    gamma: object = 1.5
    epsilon: float = 1.0
    g_zero_tol: float = 1e-9
    adaptation: bool = True
    residual_threshold: float = 1e-2  # converged-residual level: artifact choice
    descent_tol: float = 1e-10
    weight_tol: float = 1e-10
    membership_tol: float = 1e-9
    vm_descent_tol: float = 1e-6
    plan: ReferencePlan | None = None
    tracking: TrackingConfig | None = None
    nominal_descent: bool = False  # only meaningful for W=0, adaptation-off runs


@dataclass
class CheckResult:
    name: str
    passed: bool
    margin: float
    step: int
    info: str = ""


@dataclass
class InvariantReport:
    checks: list

    @property
    def all_passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def to_text(self) -> str:
        lines = []
        for c in self.checks:
            status = "pass" if c.passed else "fail"
            line = f"{c.name:<24s} {status} margin={c.margin:.6e} step={c.step}"
            if c.info:
                line += f"  ({c.info})"
            lines.append(line)
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "all_passed": self.all_passed,
            "checks": [
                {
                    "name": c.name,
                    "passed": c.passed,
                    "margin": c.margin,
                    "step": c.step,
                    "info": c.info,
                }
                for c in self.checks
            ],
        }


def _reconstruct_weights(log: SimLog, model: SystemModel, cfg: InvariantConfig):
    """Re-derive the weight sequence from logged states and MPC controls."""
    state = ad.AdaptiveState.initial(
        model.m, model.q, cfg.gamma, cfg.epsilon, cfg.g_zero_tol
    )
    seq = [state]
    if cfg.adaptation:
        for t in range(log.steps):
            state = ad.weight_update(
                state,
                model,
                log.states[t],
                log.u_m[t],
                log.states[t + 1],
                model.feature(log.states[t], t),
            )
            seq.append(state)
    else:
        seq.extend([state] * log.steps)
    return seq


def check_invariants(log: SimLog, model: SystemModel, cfg: InvariantConfig) -> InvariantReport:
    """Evaluate every logged invariant; failures are report entries, not errors."""
    checks = []
    T = log.steps
    weights = _reconstruct_weights(log, model, cfg)

    def worst(name, margins, step_offset=0, info=""):
        margins = np.asarray(margins, dtype=float)
        if margins.size == 0:
            checks.append(CheckResult(name, True, math.inf, -1, info or "no steps"))
            return
        k = int(np.argmin(margins))
        checks.append(
            CheckResult(name, bool(margins[k] >= 0.0), float(margins[k]), k + step_offset, info)
        )

    # consistency of the log with the re-derived weight sequence
    ua_err = [
        np.max(
            np.abs(
                log.u_a[t]
                - ad.adaptive_control(weights[t], model.feature(log.states[t], t))
            )
        )
        for t in range(T)
    ]
    worst("log_consistency", [1e-8 - e for e in ua_err], info="u_a vs reconstructed weights")

    # adaptation Lyapunov descent and monotonicity
    va = [ad.V_a(w, model.W_true) for w in weights]
    va_err = [abs(va[t] - log.V_a[t]) for t in range(T + 1)]
    worst("va_logged", [1e-6 * (1 + abs(v)) - e for v, e in zip(va, va_err)])
    if cfg.adaptation:
        # the per-step descent bound only binds when the update actually runs
        descent_margins = []
        for t in range(T):
            feature = model.feature(log.states[t], t)
            u_tilde = (weights[t].K + model.W_true) @ feature
            bound = ad.descent_bound(weights[t], u_tilde, feature)
            descent_margins.append(bound + cfg.descent_tol - (va[t + 1] - va[t]))
        worst("va_descent", descent_margins)
    worst("va_monotone", [va[t] + cfg.descent_tol - va[t + 1] for t in range(T)])

    # weight and control bounds
    state0 = weights[0]
    ratio = state0.gamma_ratio
    wbound = ratio * model.W_norm_F
    worst(
        "weight_bound",
        [wbound + cfg.weight_tol - np.linalg.norm(w.K + model.W_true) for w in weights],
    )
    ua_max = ad.adaptive_bound(model.W_norm_F, state0.gamma, model.delta_phi)
    worst(
        "adaptive_control_bound",
        [ua_max + cfg.weight_tol - np.linalg.norm(log.u_a[t]) for t in range(T)],
    )

    # residual convergence over the final 10% of steps; without the weight
    # update the uncancelled disturbance has no reason to shrink
    if cfg.adaptation and T > 0:
        tail = max(1, T // 10)
        mean_tail = float(np.mean(log.residual[-tail:]))
        checks.append(
            CheckResult(
                "residual_convergence",
                mean_tail <= cfg.residual_threshold,
                cfg.residual_threshold - mean_tail,
                T - tail,
                f"mean tail residual {mean_tail:.3e}; threshold is an artifact choice",
            )
        )

    # hard constraint membership
    worst(
        "control_in_U",
        [-model.U.violation(log.u[t]) + cfg.membership_tol for t in range(T)],
    )
    worst(
        "state_in_X",
        [-model.X.violation(log.states[t]) + cfg.membership_tol for t in range(T + 1)],
    )

    # tracking-value diagnostics that need the reference plan
    if cfg.plan is not None and cfg.tracking is not None and T > 0:
        cs = [
            stage_cost(
                log.states[t],
                log.u[t],
                cfg.plan.state(t),
                cfg.plan.control(t),
                cfg.tracking.Q,
                cfg.tracking.R,
            )
            for t in range(T)
        ]
        if cfg.nominal_descent:
            margins = []
            for t in range(T - 1):
                cs_nom = stage_cost(
                    log.states[t],
                    log.u_m[t],
                    cfg.plan.state(t),
                    cfg.plan.control(t),
                    cfg.tracking.Q,
                    cfg.tracking.R,
                )
                margins.append(log.V_m[t] - cs_nom - log.V_m[t + 1] + cfg.vm_descent_tol)
            worst("vm_descent", margins)
        # descent ledger: empirical constant C with
        # Delta V_m <= -c_s + C * ||g(x) u~||; reported, never asserted
        ratios = []
        for t in range(T - 1):
            if log.residual[t] > 1e-12:
                ratios.append((log.V_m[t + 1] - log.V_m[t] + cs[t]) / log.residual[t])
        C = max(ratios) if ratios else 0.0
        checks.append(
            CheckResult(
                "disturbance_ledger",
                True,
                float(C),
                -1,
                "empirical Lipschitz-type constant, informational",
            )
        )

    return InvariantReport(checks)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def save_simlog(log: SimLog, path):
    d = log.states.shape[1]
    m = log.u_m.shape[1]
    cols = (
        ["t"]
        + [f"x{j}" for j in range(d)]
        + [f"um{j}" for j in range(m)]
        + [f"ua{j}" for j in range(m)]
        + [f"u{j}" for j in range(m)]
        + ["Vm", "Va", "Ktilde_fro", "residual", "iters"]
    )
    with open(path, "w") as fh:
        for k, v in log.header.items():
            fh.write(f"# {k} = {v}\n")
        fh.write(",".join(cols) + "\n")
        for t in range(log.steps):
            row = (
                [str(t)]
                + [_fmt(v) for v in log.states[t]]
                + [_fmt(v) for v in log.u_m[t]]
                + [_fmt(v) for v in log.u_a[t]]
                + [_fmt(v) for v in log.u[t]]
                + [
                    _fmt(log.V_m[t]),
                    _fmt(log.V_a[t]),
                    _fmt(log.K_tilde_fro[t]),
                    _fmt(log.residual[t]),
                    str(int(log.iters[t])),
                ]
            )
            fh.write(",".join(row) + "\n")
        T = log.steps
        row = (
            [str(T)]
            + [_fmt(v) for v in log.states[T]]
            + [""] * (3 * m)
            + ["", _fmt(log.V_a[T]), _fmt(log.K_tilde_fro[T]), "", ""]
        )
        fh.write(",".join(row) + "\n")


def load_simlog(path) -> SimLog:
    header = {}
    rows = []
    names = None
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if line.startswith("#"):
                if "=" in line:
                    k, v = line[1:].split("=", 1)
                    header[k.strip()] = v.strip()
                continue
            if names is None:
                names = line.split(",")
                continue
            rows.append(line.split(","))
    if names is None or not rows:
        raise ConfigurationError(f"{path}: not a simulation log")
    d = sum(1 for n in names if n.startswith("x") and not n.startswith("x_"))
    m = sum(1 for n in names if n.startswith("um"))
    T = len(rows) - 1
    expected = 1 + d + 3 * m + 5
    log = SimLog(
        header=header,
        states=np.empty((T + 1, d)),
        u_m=np.empty((T, m)),
        u_a=np.empty((T, m)),
        u=np.empty((T, m)),
        V_m=np.empty(T),
        V_a=np.empty(T + 1),
        K_tilde_fro=np.empty(T + 1),
        residual=np.empty(T),
        iters=np.empty(T, dtype=int),
        control_violation=np.zeros(T, dtype=bool),
        state_violation=np.zeros(T + 1, dtype=bool),
    )
    try:
        for t, r in enumerate(rows):
            if len(r) != expected:
                raise ConfigurationError(f"{path}: row {t} has {len(r)} columns, expected {expected}")
            log.states[t] = [float(c) for c in r[1 : 1 + d]]
            if t < T:
                log.u_m[t] = [float(c) for c in r[1 + d : 1 + d + m]]
                log.u_a[t] = [float(c) for c in r[1 + d + m : 1 + d + 2 * m]]
                log.u[t] = [float(c) for c in r[1 + d + 2 * m : 1 + d + 3 * m]]
                log.V_m[t] = float(r[1 + d + 3 * m])
                log.residual[t] = float(r[1 + d + 3 * m + 3])
                log.iters[t] = int(r[1 + d + 3 * m + 4])
            log.V_a[t] = float(r[1 + d + 3 * m + 1])
            log.K_tilde_fro[t] = float(r[1 + d + 3 * m + 2])
    except ValueError as exc:
        raise ConfigurationError(f"{path}: malformed value ({exc})")
    return log
