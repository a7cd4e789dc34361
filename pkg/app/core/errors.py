class LabError(Exception):
    """Base class for failures raised by the laboratory"""
    exit_code = 1


class InvalidParameterError(LabError, ValueError):
    """Raised when a model parameter violates its constraints"""
    exit_code = 2


class DomainError(LabError, ValueError):
    """Raised when a function is evaluated outside its domain"""
    exit_code = 2


class GridMismatchError(LabError, ValueError):
    """Raised when a path array does not live on the expected time grid"""
    exit_code = 2


class KernelError(LabError, ValueError):
    """Raised when a weight kernel is unsupported or not integrable"""
    exit_code = 2


class ConfigError(LabError):
    """Raised when an experiment configuration cannot be parsed or written"""
    exit_code = 2


class InfeasibleDualError(LabError):
    """Raised when a dual control leaves the domain of the V2 conjugate"""
    exit_code = 3

    def __init__(self, message: str, fraction: float = 0.0):
        super().__init__(message)
        self.fraction = fraction


class CalibrationError(LabError):
    """Raised when the budget multiplier cannot be bracketed or solved"""
    exit_code = 4
