"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have inconsistent or unexpected dimensions."""


class InvalidSpecError(ValueError):
    """An operation was configured with impossible parameters."""


class InvalidInputError(ValueError):
    """Input data violates an operation's precondition."""


class FormatError(ValueError):
    """A file does not carry the expected magic/version."""


class CorruptionError(ValueError):
    """A file payload is truncated or inconsistent with its header."""


class IngestError(ValueError):
    """A view directory or image file cannot be imported."""


class ConfigError(ValueError):
    """A configuration violates its invariants."""


class CheckpointError(ValueError):
    """A checkpoint file does not match the expected parameter set."""


class TrainingDivergedError(RuntimeError):
    """Training produced a non-finite loss."""

    def __init__(self, step, terms):
        self.step = step
        self.terms = dict(terms)
        parts = ", ".join(f"{k}={v}" for k, v in self.terms.items())
        super().__init__(f"non-finite loss at step {step} ({parts})")
