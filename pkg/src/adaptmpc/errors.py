"""Shared exception types."""


class ConfigurationError(ValueError):
    """Bad model/solver/experiment configuration (dimension mismatch, empty box, ...)."""


class DivergenceError(RuntimeError):
    """A rollout or closed-loop run produced a non-finite or runaway state."""

    def __init__(self, msg, step=None):
        super().__init__(msg)
        self.step = step


class InfeasibleGovernorError(RuntimeError):
    """The offline reference problem did not converge to a feasible plan."""

    def __init__(self, msg, diagnostics=None):
        super().__init__(msg)
        self.diagnostics = diagnostics or {}
