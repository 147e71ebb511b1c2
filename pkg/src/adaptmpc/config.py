"""Experiment configuration: flat key = value files with per-model defaults.

Unknown keys are rejected; command-line flags override file keys; every
output file echoes the fully resolved configuration in its header.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import adaptive as ad
from .dynamics import DEG, WINGROCK_X0_DEG, Box, CSTR_X0, SystemModel, model_by_name
from .errors import ConfigurationError
from .governor import TighteningSpec
from .mpc import TrackingConfig
from .orchestrator import InvariantConfig, LoopConfig
from .trajopt import SolverOptions

__all__ = ["ExperimentConfig", "load_config", "resolve_config", "CONFIG_KEYS"]

# key -> (kind, common default); None means "model-dependent default"
CONFIG_KEYS = {
    "model": ("str", "cstr"),
    "x0": ("vector", None),
    "steps": ("int", None),
    "adaptation": ("bool", True),
    "horizon_governor": ("int", None),
    "horizon_online": ("int", None),
    "q_weight": ("matrix", None),
    "r_weight": ("matrix", None),
    "qf_weight": ("matrix", None),
    "gamma": ("matrix", 1.5),
    "epsilon": ("float", None),
    "g_zero_tol": ("float", 1e-9),
    "state_margin": ("margin", None),
    "control_margin": ("margin", None),
    "adaptive_reserve": ("reserve", None),
    "u_max": ("float", None),
    "w_true": ("matrix", None),
    "w_max": ("float", None),
    "residual_threshold": ("float", 1e-2),
    "safety_factor": ("float", 2.0),
    "tol_kkt": ("float", 1e-8),
    "max_iter_governor": ("int", 500),
    "max_iter_online": ("int", 200),
    "penalty_init": ("float", 1e3),
    "penalty_growth": ("float", 10.0),
    "penalty_rounds": ("int", 6),
    "seed": ("int", 0),
    "out": ("str", "out"),
    "reference": ("str", None),
}

MODEL_DEFAULTS = {
    "cstr": {
        "steps": 200,
        "horizon_governor": 40,
        "horizon_online": 15,
        "q_weight": "0.5",
        "r_weight": "0.5",
        "qf_weight": "1e5",
        "epsilon": 0.1,
        "state_margin": "0",
        "control_margin": "0.02:0",
        "adaptive_reserve": "0",
        "x0": "0.3918 0.9831",
    },
    "wingrock": {
        "steps": 400,
        "horizon_governor": 100,
        "horizon_online": 20,
        "q_weight": "1",
        "r_weight": "0.1",
        "qf_weight": "1",  # unspecified in the source experiment; reported in headers
        "epsilon": 1.0,
        "state_margin": "5%",
        "control_margin": "5%",
        "adaptive_reserve": "auto",
    },
}


def _parse_scalar_or_matrix(text):
    text = str(text).strip()
    if ";" in text:
        rows = [
            [float(tok) for tok in row.replace(",", " ").split()]
            for row in text.split(";")
        ]
        return np.array(rows)
    vals = [float(tok) for tok in text.replace(",", " ").split()]
    return vals[0] if len(vals) == 1 else np.array(vals)


def _parse_vector(text):
    return np.array([float(tok) for tok in str(text).replace(",", " ").split()])


def _parse_bool(text):
    text = str(text).strip().lower()
    if text in ("on", "true", "1", "yes"):
        return True
    if text in ("off", "false", "0", "no"):
        return False
    raise ConfigurationError(f"expected on/off, got {text!r}")


def load_config(path) -> dict:
    """Flat `key = value` file; '#' starts a comment."""
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigurationError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key not in CONFIG_KEYS:
                raise ConfigurationError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = value
    return out


def resolve_config(file_values: dict | None = None, overrides: dict | None = None) -> dict:
    """Merge defaults, file values and CLI overrides into a raw string map."""
    raw = {}
    for key, (_, default) in CONFIG_KEYS.items():
        if default is not None:
            raw[key] = default
    for source in (file_values or {}, overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in CONFIG_KEYS:
                raise ConfigurationError(f"unknown config key {key!r}")
            raw[key] = value
    base = str(raw.get("model", "cstr")).split(":", 1)[0].split(",", 1)[0].strip()
    defaults = MODEL_DEFAULTS.get(base, MODEL_DEFAULTS["cstr"])
    for key, value in defaults.items():
        raw.setdefault(key, value)
    return raw


@dataclass
class ExperimentConfig:
    """Fully resolved configuration for one agent."""

    model_name: str
    raw: dict = field(repr=False)
    x0: np.ndarray = None
    steps: int = 0
    adaptation: bool = True
    horizon_governor: int = 0
    horizon_online: int = 0
    Q: np.ndarray = None
    R: np.ndarray = None
    Qf: np.ndarray = None
    gamma: object = 1.5
    epsilon: float = 1.0
    g_zero_tol: float = 1e-9
    state_margin: tuple = (0.0, 0.0)
    control_margin: tuple = (0.0, 0.0)
    adaptive_reserve: object = 0.0
    u_max_override: float | None = None
    w_true_override: object = None
    w_max: float | None = None
    residual_threshold: float = 1e-2
    safety_factor: float = 2.0
    tol_kkt: float = 1e-8
    max_iter_governor: int = 500
    max_iter_online: int = 200
    penalty_init: float = 1e3
    penalty_growth: float = 10.0
    penalty_rounds: int = 6
    seed: int = 0
    out: str = "out"
    reference: str | None = None

    # ---- construction -------------------------------------------------

    @classmethod
    def from_raw(cls, raw: dict, model_name: str | None = None) -> "ExperimentConfig":
        model_name = (model_name or str(raw["model"]).strip()).strip()
        base = model_name.split(":", 1)[0]
        try:
            return cls._build(raw, model_name, base)
        except (ValueError, TypeError) as exc:
            raise ConfigurationError(f"bad configuration: {exc}")

    @classmethod
    def _build(cls, raw, model_name, base):
        def get(key):
            return raw.get(key)

        cfg = cls(model_name=model_name, raw=dict(raw))
        cfg.steps = int(get("steps"))
        if cfg.steps < 0:
            raise ConfigurationError("steps must be nonnegative")
        cfg.adaptation = _parse_bool(get("adaptation"))
        cfg.horizon_governor = int(get("horizon_governor"))
        cfg.horizon_online = int(get("horizon_online"))
        cfg.gamma = _parse_scalar_or_matrix(get("gamma"))
        cfg.epsilon = float(get("epsilon"))
        cfg.g_zero_tol = float(get("g_zero_tol"))
        cfg.residual_threshold = float(get("residual_threshold"))
        cfg.safety_factor = float(get("safety_factor"))
        cfg.tol_kkt = float(get("tol_kkt"))
        cfg.max_iter_governor = int(get("max_iter_governor"))
        cfg.max_iter_online = int(get("max_iter_online"))
        cfg.penalty_init = float(get("penalty_init"))
        cfg.penalty_growth = float(get("penalty_growth"))
        cfg.penalty_rounds = int(get("penalty_rounds"))
        cfg.seed = int(get("seed"))
        cfg.out = str(get("out"))
        cfg.reference = get("reference")
        if get("u_max") is not None:
            cfg.u_max_override = float(get("u_max"))
        if get("w_true") is not None:
            cfg.w_true_override = _parse_scalar_or_matrix(get("w_true"))
        if get("w_max") is not None:
            cfg.w_max = float(get("w_max"))

        cfg._weights_raw = (get("q_weight"), get("r_weight"), get("qf_weight"))
        cfg._margins_raw = (get("state_margin"), get("control_margin"))
        cfg._reserve_raw = str(get("adaptive_reserve"))
        if get("x0") is not None:
            cfg.x0 = _parse_vector(get("x0"))
        return cfg

    # ---- realized objects ---------------------------------------------

    def build_model(self) -> SystemModel:
        model = model_by_name(self.model_name)
        if self.w_true_override is not None:
            W = np.asarray(self.w_true_override, dtype=float)
            if W.ndim == 0 or W.size == 1:
                W = float(W) * np.ones((model.m, model.q))
            model.W_true = np.atleast_2d(W).reshape(model.m, model.q)
        if self.u_max_override is not None:
            model.U = Box([-self.u_max_override] * model.m, [self.u_max_override] * model.m)

        d, m = model.d, model.m
        q_raw, r_raw, qf_raw = self._weights_raw
        self.Q = _as_weight(q_raw, d)
        self.R = _as_weight(r_raw, m)
        self.Qf = _as_weight(qf_raw, d)
        self.state_margin = _as_margin(self._margins_raw[0], model.X)
        self.control_margin = _as_margin(self._margins_raw[1], model.U)
        self.adaptive_reserve = self._resolve_reserve(model)
        if self.x0 is None:
            self.x0 = self._default_x0(model)
        elif model.name.startswith("wingrock"):
            self.x0 = self.x0 * DEG  # configs state wing-rock angles in degrees
        if self.x0.size != d:
            raise ConfigurationError(f"x0 has dimension {self.x0.size}, expected {d}")
        return model

    def _default_x0(self, model):
        if model.name == "cstr":
            return CSTR_X0.copy()
        if model.name.startswith("wingrock:"):
            agent = int(model.name.split(":")[1])
            return WINGROCK_X0_DEG[agent] * DEG
        return model.x_e.copy()

    def _resolve_reserve(self, model) -> float:
        raw = self._reserve_raw.strip().lower()
        if raw == "auto":
            if not self.adaptation:
                # pure-MPC baseline: no adaptive component, no reserve to hold
                return 0.0
            gamma = self.gamma
            if np.ndim(gamma) == 0:
                gamma = float(gamma) * np.eye(model.m)
            return ad.adaptive_bound(model.W_norm_F, gamma, model.delta_phi)
        return float(raw)

    def tightening(self) -> TighteningSpec:
        return TighteningSpec(
            state_margin_lower=self.state_margin[0],
            state_margin_upper=self.state_margin[1],
            control_margin_lower=self.control_margin[0],
            control_margin_upper=self.control_margin[1],
            adaptive_reserve=self.adaptive_reserve,
        )

    def governor_options(self) -> SolverOptions:
        return SolverOptions(
            tol_kkt=self.tol_kkt,
            max_iter=self.max_iter_governor,
            penalty_init=self.penalty_init,
            penalty_growth=self.penalty_growth,
            penalty_rounds=self.penalty_rounds,
        )

    def tracking_config(self, model: SystemModel) -> TrackingConfig:
        return TrackingConfig(
            N=self.horizon_online,
            Q=self.Q,
            R=self.R,
            Qf=self.Qf,
            U=model.U,
            solver=SolverOptions(
                tol_kkt=self.tol_kkt, max_iter=self.max_iter_online, ftol=1e-12
            ),
        )

    def loop_config(self, adaptation: bool | None = None) -> LoopConfig:
        return LoopConfig(
            steps=self.steps,
            adaptation=self.adaptation if adaptation is None else adaptation,
            gamma=self.gamma,
            epsilon=self.epsilon,
            g_zero_tol=self.g_zero_tol,
            safety_factor=self.safety_factor,
        )

    def invariant_config(self, plan=None, tracking=None, adaptation=None, nominal_descent=False):
        return InvariantConfig(
            gamma=self.gamma,
            epsilon=self.epsilon,
            g_zero_tol=self.g_zero_tol,
            adaptation=self.adaptation if adaptation is None else adaptation,
            residual_threshold=self.residual_threshold,
            plan=plan,
            tracking=tracking,
            nominal_descent=nominal_descent,
        )

    def echo(self) -> dict:
        """Canonical header echo of every resolved key (defaults included)."""
        out = {}
        for key in CONFIG_KEYS:
            if key == "model":
                out[key] = self.model_name
            elif key in self.raw:
                out[key] = self.raw[key]
        # resolved values that differ from their raw spelling
        out["resolved_adaptive_reserve"] = f"{float(self.adaptive_reserve):.17g}"
        if self.x0 is not None:
            out["resolved_x0"] = " ".join(f"{v:.17g}" for v in np.atleast_1d(self.x0))
        return out


def _as_weight(raw, n: int) -> np.ndarray:
    val = _parse_scalar_or_matrix(raw)
    if np.ndim(val) == 0:
        return float(val) * np.eye(n)
    val = np.atleast_2d(np.asarray(val, dtype=float))
    if val.shape != (n, n):
        raise ConfigurationError(f"weight must be a scalar or {n}x{n} matrix")
    return val


def _as_margin(raw, box: Box) -> tuple:
    """Margins: "a" (both sides), "a:b" (lower:upper), or "p%" of half-width."""
    text = str(raw).strip()

    def side(tok):
        tok = tok.strip()
        if tok.endswith("%"):
            return float(tok[:-1]) / 100.0 * box.half_width
        return _parse_vector(tok) if " " in tok or "," in tok else float(tok)

    if ":" in text:
        lo, hi = text.split(":", 1)
        return side(lo), side(hi)
    v = side(text)
    return v, v
