"""Constrained trajectory optimization by direct single shooting.

Controls are the only decision variables; states are rolled out through the
nominal dynamics. Objective gradients come from a reverse adjoint sweep, and
the box-constrained minimization is delegated to a projected limited-memory
quasi-Newton method (L-BFGS-B). State and terminal constraints, when present,
are handled by quadratic penalties with weight escalation.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize

from .dynamics import Box
from .errors import ConfigurationError, DivergenceError

__all__ = ["SolverOptions", "OcpSpec", "OcpSolution", "rollout", "solve_ocp", "gradient_check"]


@dataclass(frozen=True)
class SolverOptions:
    tol_kkt: float = 1e-8
    max_iter: int = 200
    penalty_init: float = 1e3
    penalty_growth: float = 10.0
    penalty_rounds: int = 4
    constraint_tol: float = 1e-6
    maxcor: int = 20
    ftol: float = 1e-14  # relative objective-stall tolerance


@dataclass
class OcpSpec:
    """One finite-horizon tracking problem around given reference sequences."""

    N: int
    x0: np.ndarray
    step: object  # (x, u) -> x_next
    jac: object  # (x, u) -> (fx, fu)
    x_ref: np.ndarray  # (N+1, d)
    u_ref: np.ndarray  # (N, m)
    Q: np.ndarray
    R: np.ndarray
    Qf: np.ndarray
    terminal_ref: np.ndarray | None = None  # defaults to x_ref[N]
    control_box: Box | None = None
    state_box: Box | None = None
    terminal_target: np.ndarray | None = None
    # optional per-stage control bounds, shape (N, m); override control_box
    control_lower: np.ndarray | None = None
    control_upper: np.ndarray | None = None

    def __post_init__(self):
        self.x0 = np.asarray(self.x0, dtype=float)
        self.x_ref = np.asarray(self.x_ref, dtype=float)
        self.u_ref = np.asarray(self.u_ref, dtype=float)
        self.Q = np.atleast_2d(np.asarray(self.Q, dtype=float))
        self.R = np.atleast_2d(np.asarray(self.R, dtype=float))
        self.Qf = np.atleast_2d(np.asarray(self.Qf, dtype=float))
        if self.N < 1:
            raise ConfigurationError("horizon must be at least 1")
        if self.x_ref.shape != (self.N + 1, self.d):
            raise ConfigurationError(f"x_ref must be ({self.N + 1}, {self.d})")
        if self.u_ref.shape != (self.N, self.m):
            raise ConfigurationError(f"u_ref must be ({self.N}, {self.m})")
        if np.any(np.linalg.eigvalsh(self.R) <= 0):
            raise ConfigurationError("R must be positive definite")
        if np.any(np.linalg.eigvalsh(self.Q) < -1e-12):
            raise ConfigurationError("Q must be positive semi-definite")
        if self.terminal_ref is None:
            self.terminal_ref = self.x_ref[-1].copy()
        else:
            self.terminal_ref = np.asarray(self.terminal_ref, dtype=float)
        if self.terminal_target is not None:
            self.terminal_target = np.asarray(self.terminal_target, dtype=float)
        if self.control_box is not None and self.control_box.dim != self.m:
            raise ConfigurationError("control box dimension mismatch")
        if (self.control_lower is None) != (self.control_upper is None):
            raise ConfigurationError("per-stage control bounds need both sides")
        if self.control_lower is not None:
            self.control_lower = np.asarray(self.control_lower, dtype=float).reshape(self.N, self.m)
            self.control_upper = np.asarray(self.control_upper, dtype=float).reshape(self.N, self.m)
            if np.any(self.control_lower > self.control_upper):
                raise ConfigurationError("empty per-stage control bounds")
        elif self.control_box is not None:
            self.control_lower = np.tile(self.control_box.lower, (self.N, 1))
            self.control_upper = np.tile(self.control_box.upper, (self.N, 1))

    @property
    def d(self) -> int:
        return self.x0.size

    @property
    def m(self) -> int:
        return self.u_ref.shape[1] if self.u_ref.ndim == 2 else 1


@dataclass
class OcpSolution:
    controls: np.ndarray  # (N, m)
    states: np.ndarray  # (N+1, d), exact rollout of controls
    value: float
    converged: bool
    iterations: int
    kkt_residual: float
    max_violation: float = 0.0
    objective_trace: list = field(default_factory=list)


def rollout(step, x0, controls) -> np.ndarray:
    """Recursive application of the dynamics; raises on non-finite states."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    x = np.asarray(x0, dtype=float)
    states = np.empty((controls.shape[0] + 1, x.size))
    states[0] = x
    for i, u in enumerate(controls):
        try:
            x = np.asarray(step(x, u), dtype=float)
        except (OverflowError, ZeroDivisionError, FloatingPointError):
            raise DivergenceError(f"dynamics overflow at rollout step {i + 1}", step=i + 1)
        if not np.all(np.isfinite(x)):
            raise DivergenceError(f"non-finite state at rollout step {i + 1}", step=i + 1)
        states[i + 1] = x
    return states


def _box_violation_grad(box: Box, x):
    """Value and gradient of sum_j dist(x_j, [lo_j, hi_j])^2."""
    below = np.minimum(x - box.lower, 0.0)
    above = np.maximum(x - box.upper, 0.0)
    v = below + above
    return float(v @ v), 2.0 * v


def _objective(spec: OcpSpec, rho_state: float, rho_term: float):
    N, d, m = spec.N, spec.d, spec.m

    def fun(u_flat):
        U = u_flat.reshape(N, m)
        # overflow in the cost/adjoint pipeline is handled by the finite check
        with np.errstate(over="ignore", invalid="ignore"):
            return _fun_inner(U)

    def _fun_inner(U):
        try:
            X = rollout(spec.step, spec.x0, U)
            value = 0.0
            jacs = []
            for i in range(N):
                dx = X[i] - spec.x_ref[i]
                du = U[i] - spec.u_ref[i]
                value += dx @ spec.Q @ dx + du @ spec.R @ du
                jacs.append(spec.jac(X[i], U[i]))
        except (DivergenceError, OverflowError, ZeroDivisionError, FloatingPointError):
            # huge finite value so the line search backtracks instead of dying
            return 1e20, np.zeros(N * m)
        dxN = X[N] - spec.terminal_ref
        value += dxN @ spec.Qf @ dxN

        lam = 2.0 * (spec.Qf @ dxN)
        if spec.terminal_target is not None:
            e = X[N] - spec.terminal_target
            value += rho_term * float(e @ e)
            lam = lam + 2.0 * rho_term * e
        if spec.state_box is not None:
            pv, pg = _box_violation_grad(spec.state_box, X[N])
            value += rho_state * pv
            lam = lam + rho_state * pg

        grad = np.empty((N, m))
        for i in range(N - 1, -1, -1):
            fx, fu = jacs[i]
            grad[i] = 2.0 * (spec.R @ (U[i] - spec.u_ref[i])) + fu.T @ lam
            if i > 0:
                lam = 2.0 * (spec.Q @ (X[i] - spec.x_ref[i])) + fx.T @ lam
                if spec.state_box is not None:
                    pv, pg = _box_violation_grad(spec.state_box, X[i])
                    value += rho_state * pv
                    lam = lam + rho_state * pg
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            return 1e20, np.zeros(N * m)
        return value, grad.ravel()

    return fun


def _kkt_residual(spec: OcpSpec, u_flat, grad):
    trial = u_flat - grad
    if spec.control_lower is not None:
        trial = np.clip(trial, spec.control_lower.ravel(), spec.control_upper.ravel())
    return float(np.max(np.abs(u_flat - trial))) if u_flat.size else 0.0


def _constraint_violation(spec: OcpSpec, states) -> float:
    v = 0.0
    if spec.state_box is not None:
        v = max(v, max(spec.state_box.violation(x) for x in states[1:]))
    if spec.terminal_target is not None:
        v = max(v, float(np.max(np.abs(states[-1] - spec.terminal_target))))
    return v


def solve_ocp(
    spec: OcpSpec,
    warm_start=None,
    options: SolverOptions | None = None,
    keep_trace: bool = False,
) -> OcpSolution:
    """Deterministic solve; returned controls satisfy the control box exactly.

    `keep_trace` records the objective at accepted iterates (costs one extra
    evaluation per iteration; used by the descent tests)."""
    options = options or SolverOptions()
    N, m = spec.N, spec.m

    if warm_start is not None:
        u0 = np.atleast_2d(np.asarray(warm_start, dtype=float)).reshape(N, m).copy()
    else:
        u0 = spec.u_ref.copy()
    bounds = None
    if spec.control_lower is not None:
        u0 = np.clip(u0, spec.control_lower, spec.control_upper)
        bounds = list(zip(spec.control_lower.ravel(), spec.control_upper.ravel()))

    has_penalties = spec.state_box is not None or spec.terminal_target is not None
    rho = options.penalty_init
    rounds = options.penalty_rounds if has_penalties else 1

    u = u0.ravel()
    total_iters = 0
    trace = []
    for _ in range(rounds):
        fun = _objective(spec, rho_state=rho, rho_term=rho)
        # gradient tolerance relative to the objective scale at the warm start;
        # refined when the objective drops far below that scale (a bad warm
        # start must not let the stopping test fire at the first iterate)
        gtol = options.tol_kkt * (1.0 + abs(fun(u)[0]))
        trace_round = []
        cb = None
        if keep_trace:

            def cb(uk, _trace=trace_round, _fun=fun):
                _trace.append(_fun(uk)[0])

        for _refine in range(4):
            res = minimize(
                fun,
                u,
                jac=True,
                method="L-BFGS-B",
                bounds=bounds,
                callback=cb,
                options={
                    "maxiter": options.max_iter,
                    "maxcor": options.maxcor,
                    "ftol": options.ftol,
                    "gtol": gtol,
                },
            )
            u = res.x
            total_iters += res.nit
            new_gtol = options.tol_kkt * (1.0 + abs(res.fun))
            kkt_now = _kkt_residual(spec, u, res.jac)
            if res.nit == 0 and _refine == 0 and kkt_now > options.tol_kkt:
                # the warm-start objective scale stopped the solver on the
                # spot; retry once with the absolute tolerance
                gtol = options.tol_kkt
                continue
            if kkt_now <= new_gtol or new_gtol >= 0.1 * gtol:
                break
            gtol = new_gtol
        trace.extend(trace_round)
        if has_penalties:
            states = rollout(spec.step, spec.x0, u.reshape(N, m))
            if _constraint_violation(spec, states) <= options.constraint_tol:
                break
            rho *= options.penalty_growth
        else:
            break

    controls = u.reshape(N, m)
    if spec.control_lower is not None:
        controls = np.clip(controls, spec.control_lower, spec.control_upper)
    fun = _objective(spec, rho_state=rho, rho_term=rho)
    value, grad = fun(controls.ravel())
    states = rollout(spec.step, spec.x0, controls)
    kkt = _kkt_residual(spec, controls.ravel(), grad)
    return OcpSolution(
        controls=controls,
        states=states,
        value=float(value),
        converged=kkt <= options.tol_kkt * (1.0 + abs(value)),
        iterations=total_iters,
        kkt_residual=kkt,
        max_violation=_constraint_violation(spec, states),
        objective_trace=trace,
    )


def gradient_check(spec: OcpSpec, controls, rho_state: float = 0.0, rho_term: float = 0.0) -> float:
    """Max relative error of the adjoint gradient against central differences."""
    fun = _objective(spec, rho_state=rho_state, rho_term=rho_term)
    u = np.atleast_2d(np.asarray(controls, dtype=float)).reshape(spec.N, spec.m).ravel()
    _, grad = fun(u)
    err = 0.0
    for j in range(u.size):
        h = 1e-5 * max(1.0, abs(u[j]))
        e = np.zeros_like(u)
        e[j] = h
        fd = (fun(u + e)[0] - fun(u - e)[0]) / (2 * h)
        err = max(err, abs(grad[j] - fd) / max(1.0, abs(fd)))
    return err
