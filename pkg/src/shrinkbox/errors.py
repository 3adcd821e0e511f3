"""Exception hierarchy.

The CLI maps ``ValidationError`` to exit code 2 and ``DegenerateError`` to
exit code 3.
"""


class ShrinkBoxError(Exception):
    pass


class ValidationError(ShrinkBoxError, ValueError):
    """Bad input: malformed files, out-of-range parameters, invalid boxes."""


class ParseError(ValidationError):
    def __init__(self, path, line_no, field, message):
        self.path = str(path)
        self.line_no = line_no
        self.field = field
        super().__init__(f"{self.path}:{line_no}: field '{field}': {message}")


class DegenerateError(ShrinkBoxError):
    """A computation has no meaningful result for the given data."""


class DegenerateFitError(DegenerateError):
    pass


class NonPhysicalDataError(DegenerateError):
    pass


class SingularInversionError(DegenerateError):
    pass


class UndefinedMetricError(DegenerateError):
    pass


class EstimatorError(ShrinkBoxError):
    """A distance estimator could not produce a value for a box."""
