"""Exception hierarchy shared by all agisim modules."""


class AgisimError(Exception):
    """Base class for every error raised by agisim."""


class DomainError(AgisimError, ValueError):
    """Input lies outside the domain of a geodetic or numeric routine."""


class SingularJacobianError(DomainError):
    """Position Jacobian is singular (too close to a pole)."""


class NumericError(AgisimError, ArithmeticError):
    """A matrix that should be a rotation is numerically corrupted."""


class FrameMismatchError(AgisimError, ValueError):
    """Two DCMs were combined whose frame labels do not chain."""


class IngestError(AgisimError, ValueError):
    """Base class for trajectory record errors.

    ``offset`` is the byte offset of the offending field inside the record,
    ``field`` its zero-based column index and ``line`` the 1-based line
    number when the record came from a file.
    """

    def __init__(self, message, *, offset=None, field=None, line=None):
        self.offset = offset
        self.field = field
        self.line = line
        where = []
        if line is not None:
            where.append(f"line {line}")
        if field is not None:
            where.append(f"field {field}")
        if offset is not None:
            where.append(f"byte {offset}")
        if where:
            message = f"{message} ({', '.join(where)})"
        super().__init__(message)


class MalformedRecordError(IngestError):
    pass


class FieldParseError(IngestError):
    pass


class SampleValidationError(IngestError):
    pass


class StreamError(AgisimError):
    """A pose stream violates ordering or sampling-rate rules."""

    def __init__(self, message, *, index, dt=None):
        self.index = index
        self.dt = dt
        super().__init__(message)


class NonMonotonicTimeError(StreamError):
    pass


class GapError(StreamError):
    pass


class ConfigError(AgisimError, ValueError):
    def __init__(self, message, *, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DivergenceError(AgisimError):
    def __init__(self, message, *, epoch):
        self.epoch = epoch
        super().__init__(f"{message} at epoch {epoch}")
