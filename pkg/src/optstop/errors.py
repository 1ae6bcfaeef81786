"""Exception hierarchy.

The CLI maps these onto exit codes: ``UsageError`` subclasses give 2,
``NumericalError`` subclasses give 3, ``VerificationFailure`` gives 1.
"""


class OptStopError(Exception):
    pass


class UsageError(OptStopError):
    pass


class NumericalError(OptStopError):
    pass


class ParseError(UsageError):
    def __init__(self, message, offset=None):
        self.offset = offset
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)


class ConfigError(UsageError):
    pass


class DimensionError(UsageError):
    pass


class AdaptednessError(UsageError):
    pass


class StructureError(UsageError):
    pass


class SizeError(UsageError):
    def __init__(self, message, count=None):
        self.count = count
        super().__init__(message)


class StencilError(UsageError):
    pass


class EvaluationError(NumericalError):
    def __init__(self, coefficient, point, value=None):
        self.coefficient = coefficient
        self.point = point
        super().__init__(
            f"coefficient {coefficient!r} is not finite at {point!r} (got {value!r})"
        )


class DivergenceError(NumericalError):
    def __init__(self, path, step):
        self.path = path
        self.step = step
        super().__init__(f"non-finite state on path {path} at step {step}")


class StabilityError(NumericalError):
    pass


class ConvergenceError(NumericalError):
    def __init__(self, message, residual=None):
        self.residual = residual
        super().__init__(message)


class ConditioningError(NumericalError):
    pass


class CoverageError(NumericalError):
    pass


class VerificationFailure(OptStopError):
    pass
