class ConfigError(ValueError):
    """Invalid hyperparameter or shape configuration."""


class InvalidInputError(ValueError):
    """Input violates an operation's precondition (zero norm, bad shapes, ...)."""


class CheckpointError(RuntimeError):
    """Checkpoint file is truncated, corrupted, or of an unsupported version."""
