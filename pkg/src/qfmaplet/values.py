"""Fixed-width value types and their merge operators.

Each value type bundles a codec (``encode``/``decode`` between user values and
``value_bits``-wide payloads) with the merge operator ⊕ used to fold payloads
that share a fingerprint. Operator ids are the u8 codes stored in the
serialization header.
"""

from __future__ import annotations

import math
from functools import reduce
from typing import Iterable

from qfmaplet.errors import DomainError, Underflow, UnsupportedDelete, ValueOverflow


class ValueType:
    op_id: int
    name: str
    value_bits: int
    has_inverse = False
    #: whether a, b ⪯ a ⊕ b holds (one-sided error is only promised when it does)
    ordered = True
    identity = None

    def __repr__(self):
        return f"{type(self).__name__}({self.value_bits})"

    def __eq__(self, other):
        return (type(self) is type(other) and self.op_id == other.op_id
                and self.value_bits == other.value_bits)

    def __hash__(self):
        return hash((type(self), self.op_id, self.value_bits))

    # codec
    def encode(self, value) -> int:
        raise NotImplementedError

    def decode(self, payload: int):
        raise NotImplementedError

    # operator on decoded values
    def combine(self, a, b):
        raise NotImplementedError

    def leq(self, a, b) -> bool:
        raise NotImplementedError

    def invert(self, a):
        raise UnsupportedDelete(f"{self.name} values do not form a group")

    # payload-level paths used by the maplet
    def merge_payloads(self, a: int, b: int) -> int:
        return self.encode(self.combine(self.decode(a), self.decode(b)))

    def subtract_payloads(self, a: int, b: int) -> int:
        return self.encode(self.combine(self.decode(a), self.invert(self.decode(b))))

    def fold(self, payloads: Iterable[int]):
        return reduce(self.combine, map(self.decode, payloads))

    @property
    def identity_payload(self) -> int:
        return self.encode(self.identity)


class PresenceValue(ValueType):
    """Zero-width values: the maplet degenerates to a plain filter."""

    op_id = 0
    name = "presence"
    value_bits = 0
    identity = True

    def __init__(self, value_bits: int = 0):
        if value_bits != 0:
            raise ValueError("presence values are zero bits wide")

    def encode(self, value=True) -> int:
        return 0

    def decode(self, payload: int):
        return True

    def combine(self, a, b):
        return True

    def leq(self, a, b) -> bool:
        return True

    def merge_payloads(self, a, b):
        return 0

    def fold(self, payloads):
        return True


class CounterValue(ValueType):
    """Unsigned counters; ⊕ is addition.

    With ``saturate=True`` (the default) sums cap at ``2**v - 1`` and a
    saturated counter never decreases again, so the stored count always
    dominates the true count. With ``saturate=False`` overflow raises
    :class:`ValueOverflow`.
    """

    name = "counter"
    has_inverse = True
    identity = 0

    def __init__(self, value_bits: int = 16, saturate: bool = True):
        if not 1 <= value_bits <= 64:
            raise ValueError("counter width must be 1..64 bits")
        self.value_bits = value_bits
        self.saturate = saturate
        self.op_id = 1 if saturate else 2
        self.cap = (1 << value_bits) - 1

    def encode(self, value) -> int:
        if not 0 <= value <= self.cap:
            raise DomainError(f"count {value} does not fit {self.value_bits} bits")
        return int(value)

    def decode(self, payload: int) -> int:
        return int(payload)

    def combine(self, a: int, b: int) -> int:
        if b < 0:
            if self.saturate and a == self.cap:
                return a
            if a + b < 0:
                raise Underflow(f"count {a} cannot drop by {-b}")
            return a + b
        s = a + b
        if s > self.cap:
            if self.saturate:
                return self.cap
            raise ValueOverflow(f"count {s} exceeds {self.value_bits}-bit counter")
        return s

    def leq(self, a: int, b: int) -> bool:
        return a <= b

    def invert(self, a: int) -> int:
        return -a

    def merge_payloads(self, a: int, b: int) -> int:
        return self.combine(a, b)

    def subtract_payloads(self, a: int, b: int) -> int:
        return self.combine(a, -b)

    def fold(self, payloads) -> int:
        s = sum(payloads)
        if s > self.cap:
            if self.saturate:
                return self.cap
            raise ValueOverflow(f"count {s} exceeds {self.value_bits}-bit counter")
        return s


class BitsetValue(ValueType):
    """Sets over ``{0, .., w-1}`` stored as ``w``-bit masks; ⊕ is union."""

    op_id = 3
    name = "bitset"
    identity = frozenset()

    def __init__(self, value_bits: int = 64):
        if not 1 <= value_bits <= 64:
            raise ValueError("bitset width must be 1..64 bits")
        self.value_bits = value_bits

    @property
    def width(self) -> int:
        return self.value_bits

    def encode(self, value) -> int:
        if isinstance(value, int):
            value = (value,)
        out = 0
        for i in value:
            if not 0 <= i < self.width:
                raise DomainError(f"id {i} outside universe of {self.width}")
            out |= 1 << i
        return out

    def decode(self, payload: int) -> frozenset:
        out = []
        while payload:
            low = payload & -payload
            out.append(low.bit_length() - 1)
            payload ^= low
        return frozenset(out)

    def combine(self, a, b):
        return frozenset(a) | frozenset(b)

    def leq(self, a, b) -> bool:
        return frozenset(a) <= frozenset(b)

    def merge_payloads(self, a: int, b: int) -> int:
        return a | b

    def fold(self, payloads):
        acc = 0
        for p in payloads:
            acc |= p
        return self.decode(acc)


class IdSetValue(BitsetValue):
    """Small sets of ids, e.g. the SSTables that may hold a key.

    ``encoding="bitset"`` stores a ``w``-bit mask (same as :class:`BitsetValue`).
    ``encoding="index"`` stores a single id in ``ceil(log2 w)`` bits; such
    payloads cannot absorb a second id, so they only work in multiset mode,
    where each (key, id) pair gets its own slot and the union happens at query
    time.
    """

    name = "idset"

    def __init__(self, universe: int = 64, encoding: str = "bitset"):
        if encoding not in ("bitset", "index"):
            raise ValueError("encoding must be 'bitset' or 'index'")
        self.encoding = encoding
        self.universe = universe
        if encoding == "bitset":
            super().__init__(universe)
            self.op_id = 4
        else:
            if universe < 1:
                raise ValueError("universe must be positive")
            self.value_bits = max(1, math.ceil(math.log2(universe))) if universe > 1 else 1
            self.op_id = 5

    @property
    def width(self) -> int:
        return self.universe

    def encode(self, value) -> int:
        if self.encoding == "bitset":
            return super().encode(value)
        if not isinstance(value, int):
            ids = list(value)
            if len(ids) != 1:
                raise DomainError("index-encoded id sets hold exactly one id per slot")
            value = ids[0]
        if not 0 <= value < self.universe:
            raise DomainError(f"id {value} outside universe of {self.universe}")
        return value

    def decode(self, payload: int) -> frozenset:
        if self.encoding == "bitset":
            return super().decode(payload)
        return frozenset((int(payload),))

    def merge_payloads(self, a: int, b: int) -> int:
        if self.encoding == "bitset":
            return a | b
        if a == b:
            return a
        raise DomainError("index-encoded id sets cannot merge two ids into one slot")

    def fold(self, payloads):
        if self.encoding == "bitset":
            return super().fold(payloads)
        return frozenset(int(p) for p in payloads)


class DeltaCounterValue(ValueType):
    """Signed net counts (two's complement); ⊕ is addition over the integers.

    This is a group but not an ordered one: a delta of -1 is not "above" 0,
    so maplets of deltas make no one-sided-error promise.
    """

    op_id = 6
    name = "delta"
    has_inverse = True
    ordered = False
    identity = 0

    def __init__(self, value_bits: int = 8):
        if not 2 <= value_bits <= 64:
            raise ValueError("delta width must be 2..64 bits")
        self.value_bits = value_bits
        self.lo = -(1 << (value_bits - 1))
        self.hi = (1 << (value_bits - 1)) - 1

    def encode(self, value) -> int:
        if not self.lo <= value <= self.hi:
            raise DomainError(f"delta {value} does not fit {self.value_bits} signed bits")
        return value & ((1 << self.value_bits) - 1)

    def decode(self, payload: int) -> int:
        payload = int(payload)
        if payload >> (self.value_bits - 1):
            return payload - (1 << self.value_bits)
        return payload

    def combine(self, a: int, b: int) -> int:
        s = a + b
        if not self.lo <= s <= self.hi:
            raise ValueOverflow(f"delta {s} does not fit {self.value_bits} signed bits")
        return s

    def leq(self, a, b) -> bool:
        return a <= b

    def invert(self, a: int) -> int:
        return -a


def value_type_from_id(op_id: int, value_bits: int) -> ValueType:
    """Rebuild a value type from the (operator id, width) pair in a header."""
    if op_id == 0:
        return PresenceValue(value_bits)
    if op_id == 1:
        return CounterValue(value_bits, saturate=True)
    if op_id == 2:
        return CounterValue(value_bits, saturate=False)
    if op_id == 3:
        return BitsetValue(value_bits)
    if op_id == 4:
        return IdSetValue(value_bits, "bitset")
    if op_id == 5:
        return IdSetValue(1 << value_bits, "index")
    if op_id == 6:
        return DeltaCounterValue(value_bits)
    raise ValueError(f"unknown operator id {op_id}")


def parse_value_type(name: str, value_bits: int | None = None) -> ValueType:
    """Value type from a CLI-style name such as ``counter`` or ``bitset``."""
    if name == "presence":
        return PresenceValue()
    if name in ("counter", "counter-saturating"):
        return CounterValue(value_bits or 16)
    if name == "counter-checked":
        return CounterValue(value_bits or 16, saturate=False)
    if name == "bitset":
        return BitsetValue(value_bits or 64)
    if name == "delta":
        return DeltaCounterValue(value_bits or 8)
    raise ValueError(f"unknown value type {name!r}")
