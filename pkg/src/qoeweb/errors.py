"""Exception hierarchy.

``DataError`` subclasses describe bad or inconsistent inputs (CLI exit code 2);
``NumericalError`` subclasses describe computations that cannot be carried out
on otherwise valid data (CLI exit code 3).
"""


class QoeWebError(Exception):
    pass


class DataError(QoeWebError):
    pass


class NumericalError(QoeWebError):
    pass


class ParseError(DataError):
    def __init__(self, row: int, reason: str, source: str = ""):
        self.row = row
        self.reason = reason
        self.source = source
        where = f"{source}: " if source else ""
        super().__init__(f"{where}row {row}: {reason}")


class ValidationError(DataError):
    pass


class EmptyTrace(DataError):
    pass


class ZeroDuration(DataError):
    pass


class EmptyCell(DataError):
    pass


class InconsistentConditions(DataError):
    pass


class LabelMismatch(DataError):
    pass


class MissingRegressor(DataError):
    pass


class DomainError(NumericalError, ValueError):
    pass


class DegenerateTotals(NumericalError):
    pass


class ZeroWorkload(NumericalError):
    pass


class DegenerateMatrix(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class TooFewRows(NumericalError):
    pass


class NoValidSubset(NumericalError):
    pass


class ZeroCoefficient(NumericalError):
    pass
