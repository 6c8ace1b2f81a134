"""Exception types raised across the package."""


class HopRBMError(Exception):
    """Base class for all package errors."""

    code = "error"


class BadMagic(HopRBMError):
    code = "bad_magic"


class Truncated(HopRBMError):
    code = "truncated"


class SchemaMismatch(HopRBMError):
    code = "schema_mismatch"


class EmptyClass(HopRBMError):
    code = "empty_class"


class TooFewSamples(HopRBMError):
    code = "too_few_samples"


class RankDeficient(HopRBMError):
    """Matrix is not of full column rank.

    ``payload`` optionally carries the offending object (e.g. the pattern
    matrix) so callers can decide what to do with it.
    """

    code = "rank_deficient"

    def __init__(self, message, payload=None):
        super().__init__(message)
        self.payload = payload


class NotOrthogonal(HopRBMError):
    code = "not_orthogonal"


class SingularX(HopRBMError):
    code = "singular_x"


class NoConvergence(HopRBMError):
    """Iteration budget exhausted; ``result`` holds the last iterate."""

    code = "no_convergence"

    def __init__(self, message, result=None):
        super().__init__(message)
        self.result = result


class NonConvergence(NoConvergence):
    code = "non_convergence"


class TooLarge(HopRBMError):
    code = "too_large"


class DegenerateSchedule(HopRBMError):
    code = "degenerate_schedule"


class NoRetrieval(HopRBMError):
    code = "no_retrieval"


class ShapeUnknown(HopRBMError):
    code = "shape_unknown"
