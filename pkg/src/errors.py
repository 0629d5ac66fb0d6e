"""Exception hierarchy for the workbench."""


class WorkbenchError(Exception):
    """Base class for all workbench errors."""


class ConfigError(WorkbenchError, ValueError):
    """Invalid run configuration; carries the dotted path of the bad field."""

    def __init__(self, path: str, message: str):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)


class InvariantViolation(WorkbenchError, ArithmeticError):
    """A numerical contract (Hermiticity, trace, energy, ...) was broken."""


class CircuitError(WorkbenchError, ValueError):
    pass


class ChannelError(WorkbenchError, ValueError):
    pass


class TwirlError(WorkbenchError, ValueError):
    pass


class GapEquationError(WorkbenchError, ValueError):
    pass


class MitigationError(WorkbenchError, ValueError):
    pass


class SimulationError(WorkbenchError, RuntimeError):
    pass


class UnfoldingError(SimulationError):
    """Confusion matrix too ill-conditioned to unfold."""

    def __init__(self, condition: float):
        self.condition = condition
        super().__init__(f"confusion matrix is ill-conditioned (condition number {condition:.3e})")
