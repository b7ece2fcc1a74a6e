"""Exception types shared across the package.

Invalid inputs raise plain ValueError; these classes cover failures that
only show up at runtime on otherwise legal inputs.
"""


class NumericalError(RuntimeError):
    """Raised when an iteration fails to converge or a value goes non-finite."""


class ThresholdError(RuntimeError):
    """Raised when a verification check exceeds its configured threshold."""
