"""Exception hierarchy shared by every module of the toolkit."""


class CarnotError(Exception):
    """Base class for all errors raised by :mod:`carnot`."""


class AlgebraError(CarnotError, ValueError):
    pass


class AntisymmetryViolation(AlgebraError):
    pass


class JacobiViolation(AlgebraError):
    pass


class GradingViolation(AlgebraError):
    pass


class DimensionMismatch(AlgebraError):
    pass


class OriginSingular(CarnotError, ValueError):
    """A singular weight or derivative was requested at the group identity."""


class BudgetExceeded(CarnotError):
    pass


class UnsupportedStep(CarnotError, NotImplementedError):
    pass


class NegativeEigenvalue(CarnotError, ValueError):
    pass


class NonFiniteSample(CarnotError, ValueError):
    pass


class OutOfRange(CarnotError, ValueError):
    pass


class NonConvergence(CarnotError, RuntimeError):
    pass


class FactorizationFailure(CarnotError, RuntimeError):
    pass


class MissingConstant(CarnotError, ValueError):
    pass


class RateViolation(CarnotError):
    def __init__(self, message, worst_radius=None, ratio=None):
        super().__init__(message)
        self.worst_radius = worst_radius
        self.ratio = ratio


class SupportViolation(CarnotError, ValueError):
    pass


class PencilSingular(CarnotError, ValueError):
    pass


class SolveFailure(CarnotError, RuntimeError):
    pass


class MatchingAmbiguous(CarnotError):
    pass


class ParseError(CarnotError, ValueError):
    def __init__(self, message, line=None, column=None):
        where = f" (line {line}, column {column})" if line is not None else ""
        super().__init__(message + where)
        self.line = line
        self.column = column


class ValidationError(CarnotError, ValueError):
    """Carries every violation found, each as ``(field_path, message)``."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("; ".join(f"{p}: {m}" for p, m in self.violations))
