"""
Exception hierarchy for selftrap-lab.
Each error carries the process exit code the CLI returns for it.
"""


class LabError(Exception):
    """Base class for all selftrap-lab failures."""
    exit_code = 1


class ConfigurationError(LabError):
    """Exception raised when a run is configured inconsistently."""
    exit_code = 2


class DomainError(ConfigurationError):
    """Exception raised when a physical parameter is outside its domain."""
    pass


class DataError(LabError):
    """Exception raised when field data is unusable (non-finite, unnormalized, all masked)."""
    pass


class DivergenceError(LabError):
    """Exception raised when the self-trap ODE never reaches its stop threshold."""
    pass


class TableLoadError(DataError):
    """Exception raised when an emitted csv/json file cannot be read back."""
    pass


class InvariantError(LabError):
    """Exception raised when a checked invariant does not hold."""
    pass
