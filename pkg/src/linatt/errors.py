"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """Raised when an operation is called with arguments that break its contract
    (shape mismatches, invalid enum values, non-scalar backward roots, ...)."""
