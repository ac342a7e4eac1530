"""Exception hierarchy shared by all decmatch modules."""


class DecmatchError(Exception):
    """Base class for every error raised by this package."""


class DuplicatePayoff(DecmatchError, ValueError):
    """An agent's payoff row/column contains a repeated value (non-strict preferences)."""


class InvalidMarket(DecmatchError, ValueError):
    pass


class EnumerationCapExceeded(DecmatchError):
    pass


class InternalInconsistency(DecmatchError, AssertionError):
    pass


class EmptyCandidateSet(DecmatchError, ValueError):
    pass


class StepCapExceeded(DecmatchError):
    pass


class DegenerateNormalizer(DecmatchError, ZeroDivisionError):
    pass


class GenerationBudgetExhausted(DecmatchError):
    def __init__(self, attempts: int, message: str = ""):
        self.attempts = attempts
        super().__init__(message or f"no valid market after {attempts} attempts")


class SchemaMismatch(DecmatchError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class NotConverged(DecmatchError):
    def __init__(self, result, message: str = "Newton iterations did not converge"):
        self.result = result
        super().__init__(message)


class RankDeficient(DecmatchError, ValueError):
    def __init__(self, columns):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; aliased columns: {self.columns}")


class Separation(DecmatchError):
    pass


class ZeroVarianceResponse(DecmatchError, ValueError):
    pass
