"""Exception hierarchy shared across the package.

The CLI maps these onto exit-code categories, so raising the right
subclass matters more than the message text.
"""


class DigatError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(DigatError):
    """Invalid or inconsistent run configuration."""


class DataFormatError(DigatError):
    """Malformed input file (news, behaviors, embeddings, caches)."""


class ShapeMismatchError(DigatError):
    """Tensor operands do not conform."""


class DomainError(DigatError):
    """Operation applied outside its mathematical domain."""


class StaleTapeError(DigatError):
    """Backward invoked on a tape that was already consumed."""


class ContractError(DigatError):
    """A documented precondition was violated by the caller."""


class NumericFaultError(DigatError):
    """NaN or Inf encountered where finite values are required."""


class UndefinedMetricError(DigatError):
    """A ranking metric was requested on inputs where it has no value."""
