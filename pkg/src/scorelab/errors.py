"""Exception types shared across the package."""


class ParameterError(ValueError):
    """An argument violates a documented precondition."""


class NumericError(ArithmeticError):
    """A computation produced non-finite values or hit a singularity."""


class TrainingError(RuntimeError):
    """Denoiser training diverged; carries a diagnostic message."""


class ConfigError(ValueError):
    """A run configuration failed validation before any compute."""
