"""Exceptions raised by sdaclab.

Every error maps onto one CLI exit code, see ``sdaclab.cli``.
"""


class ConfigurationError(ValueError):
    """Invalid dimensions, unknown modes or unresolvable configuration values."""


class ContractViolation(ValueError):
    """An operation was called with arguments that break its precondition."""


class CapacityError(ValueError):
    """A tabular construction or exact enumeration exceeds its configured cap."""


class TopologyError(ValueError):
    """A communication graph or weight matrix cannot be used for consensus."""


class SchemaError(ValueError):
    """A metrics or aggregate file lacks required columns."""


class AssumptionViolation(RuntimeError):
    """A standing assumption of the convergence analysis fails numerically.

    Attributes:
        assumption (int): Number of the violated assumption (1-6).

    """

    def __init__(self, assumption: int, message: str):
        """Store the assumption number next to the message."""
        super().__init__(f"Assumption {assumption}: {message}")
        self.assumption = assumption


class MixingError(AssumptionViolation):
    """Power iteration for a stationary distribution did not converge."""

    def __init__(self, message: str):
        """Attach the message to the mixing assumption."""
        super().__init__(4, message)
