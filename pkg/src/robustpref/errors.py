class RobustPrefError(Exception):
    """Base class for all library errors."""


class ConfigError(RobustPrefError, ValueError):
    """Missing or malformed configuration (loss parameters, CLI flags, config files)."""


class DomainError(RobustPrefError, ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class GenerationError(RobustPrefError):
    """A dataset generator cannot satisfy its request."""


class TrainingError(RobustPrefError):
    """Training diverged or the objective has no minimizer."""

    def __init__(self, message: str, epoch: int | None = None):
        super().__init__(message if epoch is None else f"epoch {epoch}: {message}")
        self.epoch = epoch
