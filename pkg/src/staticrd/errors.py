"""Exception types. Each carries the CLI exit code it maps to."""


class StaticRDError(Exception):
    exit_code = 4


class InputError(StaticRDError):
    """Malformed or inconsistent user input."""

    exit_code = 2


class MalformedToken(InputError):
    pass


class UnbalancedLoops(InputError):
    pass


class BadTripCount(InputError):
    pass


class UnresolvedParam(InputError):
    pass


class UnknownIterator(InputError):
    pass


class NonRectangularFootprint(InputError):
    pass


class DepthUnsupported(InputError):
    pass


class ArityMismatch(InputError):
    pass


class EmptyHistogram(InputError):
    pass


class CapExceeded(StaticRDError):
    exit_code = 3


class InvariantViolation(StaticRDError):
    exit_code = 4


class IncompleteSamples(InvariantViolation):
    pass


class ClassMismatch(InvariantViolation):
    pass


class UnionTooComplex(StaticRDError):
    exit_code = 4
