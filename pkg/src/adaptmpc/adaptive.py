"""Discrete-time weight adaptation: update law, control component and bounds.

The learner maintains K (m x q) so that u_a = K phi(x) cancels the matched
disturbance W phi(x); the update divides the measured one-step residual by the
input matrix (pseudo-inverse) and a normalized feature outer product.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dynamics import SystemModel
from .errors import ConfigurationError

__all__ = [
    "AdaptiveState",
    "AdaptiveDiagnostics",
    "adaptive_control",
    "weight_update",
    "analysis_update",
    "adaptive_bound",
    "apparent_disturbance_bound",
    "diagnostics",
]

PINV_RCOND = 1e-10


def _as_gain_matrix(gamma, m: int) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim == 0:
        gamma = float(gamma) * np.eye(m)
    gamma = np.atleast_2d(gamma)
    if gamma.shape != (m, m):
        raise ConfigurationError(f"gain matrix must be {m}x{m}, got {gamma.shape}")
    if not np.allclose(gamma, gamma.T, atol=1e-12):
        raise ConfigurationError("gain matrix must be symmetric")
    eig = np.linalg.eigvalsh(gamma)
    if eig[0] <= 0.0 or eig[-1] >= 2.0:
        raise ConfigurationError(
            f"gain eigenvalues must lie in (0, 2), got [{eig[0]:.4g}, {eig[-1]:.4g}]"
        )
    return gamma


@dataclass(frozen=True)
class AdaptiveState:
    """Learned weight K with gains; K starts at zero. The gain acts on the
    control-sized residual, so it is m x m symmetric with eigenvalues in (0, 2)."""

    K: np.ndarray
    gamma: np.ndarray
    epsilon: float
    g_zero_tol: float = 1e-9

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ConfigurationError("epsilon must be positive")
        object.__setattr__(self, "K", np.atleast_2d(np.asarray(self.K, dtype=float)))
        object.__setattr__(self, "gamma", _as_gain_matrix(self.gamma, self.K.shape[0]))

    @classmethod
    def initial(cls, m: int, q: int, gamma, epsilon: float, g_zero_tol: float = 1e-9):
        return cls(np.zeros((m, q)), gamma, float(epsilon), g_zero_tol)

    @property
    def gamma_ratio(self) -> float:
        eig = np.linalg.eigvalsh(self.gamma)
        return float(np.sqrt(eig[-1] / eig[0]))


@dataclass(frozen=True)
class AdaptiveDiagnostics:
    """Simulation-only quantities (they require the ground-truth weight)."""

    V_a: float
    K_tilde_norm: float
    residual_norm: float


def adaptive_control(state: AdaptiveState, feature) -> np.ndarray:
    feature = np.asarray(feature, dtype=float)
    if feature.size != state.K.shape[1]:
        raise ConfigurationError(
            f"feature length {feature.size} does not match K columns {state.K.shape[1]}"
        )
    return state.K @ feature


def weight_update(
    state: AdaptiveState,
    model: SystemModel,
    x_t,
    u_m,
    x_next,
    feature,
) -> AdaptiveState:
    """One step of the residual-driven update; K is unchanged when the input
    matrix is (numerically) zero."""
    g = model.g(x_t)
    if np.linalg.norm(g) <= state.g_zero_tol:
        return state
    feature = np.asarray(feature, dtype=float)
    residual = np.asarray(x_next, dtype=float) - model.step_nominal(x_t, u_m)
    g_pinv = np.linalg.pinv(g, rcond=PINV_RCOND)
    num = state.gamma @ (g_pinv @ residual)[:, None] @ feature[None, :]
    K_next = state.K - num / (state.epsilon + float(feature @ feature))
    return replace(state, K=K_next)


def analysis_update(K_tilde, u_tilde, feature, gamma, epsilon: float) -> np.ndarray:
    """Error-coordinate form of the update (test oracle only): with
    u_tilde = K_tilde phi the two forms agree whenever g has full column rank."""
    K_tilde = np.atleast_2d(np.asarray(K_tilde, dtype=float))
    u_tilde = np.atleast_1d(np.asarray(u_tilde, dtype=float))
    feature = np.atleast_1d(np.asarray(feature, dtype=float))
    gamma = _as_gain_matrix(gamma, K_tilde.shape[0])
    num = gamma @ u_tilde[:, None] @ feature[None, :]
    return K_tilde - num / (epsilon + float(feature @ feature))


def adaptive_bound(W_norm_F: float, gamma, delta_phi: float) -> float:
    """Worst-case norm of the adaptive control component."""
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    if gamma.ndim == 2 and gamma.shape[0] == gamma.shape[1]:
        eig = np.linalg.eigvalsh(gamma)
        ratio = np.sqrt(eig[-1] / eig[0])
    else:
        raise ConfigurationError("gamma must be a square matrix or scalar")
    return float((ratio + 1.0) * W_norm_F * delta_phi)


def apparent_disturbance_bound(model: SystemModel, gamma) -> float:
    """Bound on the uncancelled disturbance ||g(x) (K + W) phi(x)|| that the
    tracking controller observes."""
    gamma = np.atleast_2d(np.asarray(gamma, dtype=float))
    eig = np.linalg.eigvalsh(gamma)
    ratio = np.sqrt(eig[-1] / eig[0])
    return float(model.delta_g * ratio * model.W_norm_F * model.delta_phi)


def V_a(state: AdaptiveState, W_true) -> float:
    """Adaptation Lyapunov value trace(K~' Gamma^-1 K~) with K~ = K + W."""
    K_tilde = state.K + np.atleast_2d(np.asarray(W_true, dtype=float))
    return float(np.trace(K_tilde.T @ np.linalg.inv(state.gamma) @ K_tilde))


def descent_bound(state: AdaptiveState, u_tilde, feature) -> float:
    """Per-step upper bound on V_a(K_{t+1}) - V_a(K_t):
    -u~' (2I - Gamma) u~ / (eps + ||phi||^2)."""
    u_tilde = np.atleast_1d(np.asarray(u_tilde, dtype=float))
    feature = np.atleast_1d(np.asarray(feature, dtype=float))
    two_minus = 2.0 * np.eye(state.gamma.shape[0]) - state.gamma
    return float(-(u_tilde @ two_minus @ u_tilde) / (state.epsilon + feature @ feature))


def diagnostics(state: AdaptiveState, model: SystemModel, x, t: int) -> AdaptiveDiagnostics:
    K_tilde = state.K + model.W_true
    feature = model.feature(x, t)
    u_tilde = K_tilde @ feature
    return AdaptiveDiagnostics(
        V_a=V_a(state, model.W_true),
        K_tilde_norm=float(np.linalg.norm(K_tilde)),
        residual_norm=float(np.linalg.norm(model.g(x) @ u_tilde)),
    )
