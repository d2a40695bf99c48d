"""Exception types shared across the laboratory modules."""


class InvalidInputError(ValueError):
    """An argument violates a documented precondition (shape, finiteness, range)."""


class InvalidPartitionError(ValueError):
    """A requested image partition is impossible (patch count does not divide the grid)."""


class InvalidConfigurationError(ValueError):
    """An experiment or operator configuration is internally inconsistent."""


class UnsupportedVariantError(ValueError):
    """The requested operation is not defined for this kernel variant."""


class SingularOperatorError(ValueError):
    """A linear solve found no usable spectrum (all singular values truncated)."""
