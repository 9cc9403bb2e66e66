"""Exception hierarchy shared by every module."""

from qfmaplet._kernel_py import CapacityExceeded as _KernelCapacityExceeded


class MapletError(Exception):
    """Base class for all library errors."""


class CapacityExceeded(MapletError, _KernelCapacityExceeded):
    """An insert would push the filter past its maximum load factor."""


class RemainderExhausted(MapletError):
    """Resizing would leave fewer than one remainder bit."""


class NotFound(MapletError, KeyError):
    pass


class MultipleInstances(MapletError):
    """A merged-slot update found the fingerprint stored more than once."""


class IncompatibleParams(MapletError, ValueError):
    pass


class ValueOverflow(MapletError, OverflowError):
    pass


class Underflow(MapletError, ArithmeticError):
    pass


class UnsupportedDelete(MapletError):
    pass


class DomainError(MapletError, ValueError):
    """A value cannot be encoded in the configured payload width."""


class FormatError(MapletError, ValueError):
    """A serialized maplet is malformed or fails its checksum."""


class TruncatedStream(FormatError):
    pass


class ParseError(MapletError, ValueError):
    def __init__(self, message, line=None, source=None):
        self.line = line
        self.source = source
        where = ""
        if source is not None:
            where += f"{source}:"
        if line is not None:
            where += f"{line}:"
        super().__init__(f"{where} {message}" if where else message)


class TooManyExperiments(MapletError, ValueError):
    pass
