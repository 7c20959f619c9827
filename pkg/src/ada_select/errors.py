"""Exception types shared across the package."""


class InvalidInput(ValueError):
    """Caller passed data violating a documented precondition."""


class NotEstimable(RuntimeError):
    """A per-class statistic cannot be computed (no supporting regions)."""


class InternalError(RuntimeError):
    """An internal consistency guarantee was broken; indicates a bug."""
