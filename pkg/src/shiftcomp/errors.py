"""Exception types shared across the package."""


class ShapeError(ValueError):
    """Operands have incompatible shapes for the requested operation."""


class NonFiniteError(FloatingPointError):
    """A computation produced NaN or Inf where finite values are required."""


class GraphError(RuntimeError):
    """Misuse of the differentiation graph (e.g. backward called twice)."""


class SupportViolationError(ValueError):
    """A query point lies outside the support of the training distribution."""


class DimensionGuardError(ValueError):
    """Input dimensionality exceeds what the estimator can handle."""


class TrainingDivergedError(RuntimeError):
    """Training aborted on a non-finite loss; carries a diagnostic snapshot."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = dict(snapshot or {})


class ConfigError(ValueError):
    """Invalid or unknown experiment configuration entry."""
