"""Quotient-filter maplets: approximate key-value maps with one-sided error."""

from qfmaplet._backend import BACKEND
from qfmaplet.core import FilterCore, FilterParams, Fingerprint, hash_key
from qfmaplet.errors import (
    CapacityExceeded,
    DomainError,
    FormatError,
    IncompatibleParams,
    MapletError,
    MultipleInstances,
    NotFound,
    ParseError,
    RemainderExhausted,
    TooManyExperiments,
    TruncatedStream,
    Underflow,
    UnsupportedDelete,
    ValueOverflow,
)
from qfmaplet.maplet import Maplet, Mode, build_counting_maplet, merge
from qfmaplet.values import (
    BitsetValue,
    CounterValue,
    DeltaCounterValue,
    IdSetValue,
    PresenceValue,
    ValueType,
)

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "BitsetValue", "CapacityExceeded", "CounterValue", "DeltaCounterValue",
    "DomainError", "FilterCore", "FilterParams", "Fingerprint", "FormatError", "IdSetValue",
    "IncompatibleParams", "Maplet", "MapletError", "Mode", "MultipleInstances", "NotFound",
    "ParseError", "PresenceValue", "RemainderExhausted", "TooManyExperiments",
    "TruncatedStream", "Underflow", "UnsupportedDelete", "ValueOverflow", "ValueType",
    "build_counting_maplet", "hash_key", "merge",
]
