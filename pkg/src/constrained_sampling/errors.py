"""Exception hierarchy shared by every module."""


class SamplingError(Exception):
    """Base class for all errors raised by this package."""


class MalformedSequenceError(SamplingError, ValueError):
    """A prefix contains an out-of-range id or tokens after EOS."""


class VocabularyError(SamplingError, ValueError):
    pass


class DistributionError(SamplingError, ValueError):
    """A next-token vector is negative, non-finite or not normalized."""


class ContractViolation(SamplingError):
    """A caller broke a documented precondition (e.g. queried an invalid prefix)."""


class EmptyLanguageError(SamplingError):
    """The constraint admits no complete sequence with positive probability."""


class IngestionError(SamplingError, ValueError):
    pass


class DeadEndError(SamplingError):
    """No valid next token exists after a prefix the constrainer called valid."""


class BudgetExceeded(SamplingError):
    """A model-call, step or length budget ran out.

    ``diagnostics`` carries whatever the raising decoder knew at the time
    (root validity estimate, deepest prefix reached, counters).
    """

    def __init__(self, message, **diagnostics):
        super().__init__(message)
        self.diagnostics = diagnostics


class InstanceTooLarge(SamplingError):
    pass


class InvariantViolation(SamplingError, AssertionError):
    """Internal bookkeeping reached a state that should be impossible."""


class ConfigError(SamplingError, ValueError):
    pass


class InvalidSampleError(SamplingError, ValueError):
    """A sample has zero probability under the model it is scored against."""


class GenerationError(SamplingError, ValueError):
    """Benchmark generator parameters describe a degenerate instance."""
