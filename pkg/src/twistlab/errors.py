"""Error types raised by the toolkit.

Each exception carries a stable ``code`` string so the CLI can report it and
map it to an exit status.
"""


class TwistLabError(Exception):
    code = "ERROR"
    exit_code = 2

    def __init__(self, message="", **details):
        super().__init__(message)
        self.details = details


class AssumptionViolated(TwistLabError):
    code = "ASSUMPTION_VIOLATED"


class NoConvergence(TwistLabError):
    code = "NO_CONVERGENCE"
    exit_code = 3


class FlatDegenerate(TwistLabError):
    code = "FLAT_DEGENERATE"


class BisectionFail(TwistLabError):
    code = "BISECTION_FAIL"
    exit_code = 3


class EmptySet(TwistLabError):
    code = "EMPTY_SET"
    exit_code = 3


class NoGap(TwistLabError):
    code = "NO_GAP"


class BoundaryMiss(TwistLabError):
    code = "BOUNDARY_MISS"
    exit_code = 3


class ChainStalled(TwistLabError):
    code = "CHAIN_STALLED"
    exit_code = 3


class TooShort(TwistLabError):
    code = "TOO_SHORT"


class SingularBackward(TwistLabError):
    code = "SINGULAR_BACKWARD"


class MonotonicityViolation(TwistLabError):
    code = "MONOTONICITY_VIOLATION"
    exit_code = 3


class CorruptCache(TwistLabError):
    code = "CORRUPT_CACHE"


class AlphaPrimeTie(TwistLabError):
    code = "ALPHA_PRIME_TIE"


class DegenerateKink(UserWarning):
    """A node is flagged singular but its one-sided derivatives coincide."""

    code = "DEGENERATE_KINK"
