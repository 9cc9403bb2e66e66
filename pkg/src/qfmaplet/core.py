"""Perfect-hashing filter core.

A :class:`FilterCore` stores a multiset of ``p``-bit fingerprints in a
rank/select quotient filter and gives every stored instance its own slot, with
a ``v``-bit payload kept next to the remainder. The maplet layer builds on the
slot-per-instance guarantee; this module knows nothing about merge operators
or resize policy.
"""

from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Iterator

import numpy as np

from qfmaplet import _backend
from qfmaplet.errors import (
    CapacityExceeded,
    IncompatibleParams,
    MultipleInstances,
    NotFound,
    RemainderExhausted,
)
from qfmaplet.hashing import DEFAULT_SEED, XXH3Hasher, make_hasher
from qfmaplet._kernel_py import CapacityExceeded as _KernelFull

#: occupieds + runends bits, plus 8 of each block's 16 offset bits spread over 64 slots
METADATA_BITS_PER_SLOT = 2.125
#: the other 8 bits of each 64-slot block's 16-bit offset field
BLOCK_OVERHEAD_BITS = 8
SLOTS_PER_BLOCK = 64
MIN_QUOTIENT_BITS = 6
MAX_REMAINDER_BITS = 56
MAX_VALUE_BITS = 64
ALPHA_SCALE = 1 << 16


def quantize_alpha(alpha: float) -> float:
    """Round a load factor to the u16 fixed-point form stored on disk."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"max load factor must be in (0, 1), got {alpha}")
    return max(1, round(alpha * ALPHA_SCALE)) / ALPHA_SCALE


@dataclass(frozen=True)
class FilterParams:
    quotient_bits: int
    remainder_bits: int
    value_bits: int = 0
    max_load_factor: float = 0.95
    hash_seed: int = DEFAULT_SEED
    hash_id: int = XXH3Hasher.hash_id

    def __post_init__(self):
        if self.quotient_bits < MIN_QUOTIENT_BITS:
            raise ValueError(f"quotient_bits must be >= {MIN_QUOTIENT_BITS}")
        if not 1 <= self.remainder_bits <= MAX_REMAINDER_BITS:
            raise ValueError(f"remainder_bits must be in 1..{MAX_REMAINDER_BITS}")
        if not 0 <= self.value_bits <= MAX_VALUE_BITS:
            raise ValueError(f"value_bits must be in 0..{MAX_VALUE_BITS}")
        if self.fingerprint_bits > 64:
            raise ValueError("fingerprints are limited to 64 bits")
        object.__setattr__(self, "max_load_factor", quantize_alpha(self.max_load_factor))

    @property
    def fingerprint_bits(self) -> int:
        return self.quotient_bits + self.remainder_bits

    @property
    def nslots(self) -> int:
        return 1 << self.quotient_bits

    @property
    def max_items(self) -> int:
        return math.floor(self.max_load_factor * self.nslots)

    @classmethod
    def for_capacity(cls, capacity: int, epsilon: float, value_bits: int = 0,
                     max_load_factor: float = 0.95, **kw) -> FilterParams:
        """Size a filter so ``capacity`` items stay below the load limit.

        ``p = ceil(log2(capacity / epsilon))`` makes the chance that a given
        absent key collides with any of ``capacity`` stored fingerprints at
        most ``epsilon``.
        """
        if capacity < 1:
            capacity = 1
        if not 0.0 < epsilon < 1.0:
            raise ValueError("epsilon must be in (0, 1)")
        alpha = quantize_alpha(max_load_factor)
        p = math.ceil(math.log2(capacity / epsilon))
        q = max(MIN_QUOTIENT_BITS, math.ceil(math.log2(capacity / alpha)))
        while math.floor(alpha * (1 << q)) < capacity:
            q += 1
        r = max(1, p - q)
        if r > MAX_REMAINDER_BITS:
            raise ValueError(f"epsilon {epsilon} needs {r} remainder bits (max {MAX_REMAINDER_BITS})")
        return cls(q, r, value_bits, alpha, **kw)

    def hasher(self):
        return make_hasher(self.hash_id, self.hash_seed)


@dataclass(frozen=True)
class Fingerprint:
    raw: int
    quotient_bits: int = field(compare=False)
    remainder_bits: int = field(compare=False)

    @property
    def home_slot(self) -> int:
        return self.raw >> self.remainder_bits

    @property
    def remainder(self) -> int:
        return self.raw & ((1 << self.remainder_bits) - 1)

    def __int__(self):
        return self.raw


def hash_key(key: bytes, params: FilterParams) -> Fingerprint:
    p = params.fingerprint_bits
    raw = params.hasher().fingerprint(key, p)
    return Fingerprint(raw, params.quotient_bits, params.remainder_bits)


def _raw(fp) -> int:
    return fp.raw if isinstance(fp, Fingerprint) else int(fp)


class FilterCore:
    """Multiset of fingerprints, one slot (and payload) per instance."""

    def __init__(self, params: FilterParams, kernel=None):
        self.params = params
        if kernel is None:
            kernel = _backend.QuotientKernel(params.quotient_bits, params.remainder_bits,
                                             params.max_items)
        self._k = kernel
        self._vmask = (1 << params.value_bits) - 1

    def __repr__(self):
        p = self.params
        return (f"FilterCore(q={p.quotient_bits}, r={p.remainder_bits}, v={p.value_bits}, "
                f"count={self.count})")

    @property
    def kernel(self):
        return self._k

    @property
    def count(self) -> int:
        return self._k.count

    def __len__(self):
        return self._k.count

    @property
    def load_factor(self) -> float:
        return self._k.count / self.params.nslots

    def fingerprint(self, raw: int) -> Fingerprint:
        return Fingerprint(raw, self.params.quotient_bits, self.params.remainder_bits)

    def _check_raw(self, raw):
        if raw >> self.params.fingerprint_bits:
            raise ValueError(f"fingerprint {raw:#x} wider than {self.params.fingerprint_bits} bits")

    def insert_fp(self, fp, payload: int = 0) -> int:
        raw = _raw(fp)
        self._check_raw(raw)
        if payload & ~self._vmask:
            raise ValueError(f"payload {payload} wider than {self.params.value_bits} bits")
        try:
            return self._k.insert(raw, payload)
        except _KernelFull:
            raise CapacityExceeded(
                f"load factor would exceed {self.params.max_load_factor:.4f} "
                f"({self.params.max_items} of {self.params.nslots} slots)") from None

    def find_all(self, fp) -> list[tuple[int, int]]:
        raw = _raw(fp)
        first, n = self._k.find(raw)
        mask = self.params.nslots - 1
        get = self._k.get_value
        return [((first + i) & mask, get(first + i)) for i in range(n)]

    def payloads(self, fp) -> list[int]:
        return self._k.values(_raw(fp))

    def contains(self, fp) -> bool:
        return self._k.find(_raw(fp))[1] > 0

    def remove_one(self, fp, select: Callable[[int], bool] | None = None) -> int:
        """Remove one stored instance of fp whose payload satisfies select.

        The first match in run order (lowest slot position) goes.
        """
        raw = _raw(fp)
        first, n = self._k.find(raw)
        for i in range(n):
            payload = self._k.get_value(first + i)
            if select is None or select(payload):
                self._k.delete(raw, first + i)
                return payload
        raise NotFound(f"no stored instance of fingerprint {raw:#x} matches")

    def update_in_place(self, fp, transform: Callable[[int], int]) -> int:
        raw = _raw(fp)
        first, n = self._k.find(raw)
        if n == 0:
            return 0
        if n > 1:
            raise MultipleInstances(f"fingerprint {raw:#x} stored {n} times")
        new = transform(self._k.get_value(first))
        if new & ~self._vmask:
            raise ValueError(f"payload {new} wider than {self.params.value_bits} bits")
        self._k.set_value(first, new)
        return 1

    def enumerate_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        fps, vals = self._k.enumerate()
        return (np.frombuffer(fps, dtype=np.uint64).copy(),
                np.frombuffer(vals, dtype=np.uint64).copy())

    def enumerate(self) -> Iterator[tuple[Fingerprint, int]]:
        fps, vals = self._k.enumerate()
        q, r = self.params.quotient_bits, self.params.remainder_bits
        for raw, val in zip(fps, vals):
            yield Fingerprint(raw, q, r), val

    def resize_double(self) -> FilterCore:
        p = self.params
        if p.remainder_bits <= 1:
            raise RemainderExhausted(
                "cannot move another bit from remainder to quotient; rebuild from "
                "the original keys with a wider fingerprint")
        new = FilterCore(replace(p, quotient_bits=p.quotient_bits + 1,
                                 remainder_bits=p.remainder_bits - 1))
        fps, vals = self._k.enumerate()
        new._bulk_insert(fps, vals)
        return new

    def _bulk_insert(self, fps, vals):
        ins = self._k.insert
        for raw, val in zip(fps, vals):
            ins(raw, val)

    def space_bits(self) -> int:
        p = self.params
        nslots = p.nslots
        per_slot = p.remainder_bits + p.value_bits + METADATA_BITS_PER_SLOT
        total = nslots * per_slot + (nslots // SLOTS_PER_BLOCK) * BLOCK_OVERHEAD_BITS
        return int(total)

    # -- verification helpers ---------------------------------------------

    def check_invariants(self) -> None:
        """Full scan; raises AssertionError on any structural violation."""
        k = self._k
        occ = np.frombuffer(k.occupieds, dtype=np.uint64)
        ends = np.frombuffer(k.runends, dtype=np.uint64)
        n_occ = sum(int(w).bit_count() for w in occ)
        n_end = sum(int(w).bit_count() for w in ends)
        assert n_occ == n_end, f"{n_occ} occupied quotients but {n_end} runends"
        derived = derive_offsets(k.occupieds, k.runends, self.params.nslots)
        stored = np.frombuffer(k.offsets, dtype=np.uint32)
        assert np.array_equal(derived, stored), "block offsets out of sync"
        fps, _ = k.enumerate()
        assert len(fps) == k.count, "enumerate() length differs from count"
        assert all(fps[i] <= fps[i + 1] for i in range(len(fps) - 1)), "run order broken"


def _bits(words: np.ndarray, nslots: int) -> np.ndarray:
    b = np.unpackbits(np.ascontiguousarray(words, dtype="<u8").view(np.uint8), bitorder="little")
    return b[:nslots].astype(np.int64)


def derive_offsets(occupieds, runends, nslots: int) -> np.ndarray:
    """Recompute every block offset from the two metadata bit vectors alone.

    With ``open(s)`` the number of runs whose quotient is at or before slot
    ``s`` and that have not ended before ``s``, a slot is empty exactly when
    ``open(s) == 0``. A linear prefix count gives ``open`` up to a constant
    (the runs wrapping past the end of the table), fixed by requiring its
    minimum to be zero.
    """
    occ = _bits(np.frombuffer(occupieds, dtype=np.uint64), nslots)
    end = _bits(np.frombuffer(runends, dtype=np.uint64), nslots)
    nblocks = nslots // SLOTS_PER_BLOCK
    out = np.zeros(nblocks, dtype=np.uint32)
    if not occ.any():
        return out
    occ_incl = np.cumsum(occ)
    end_excl = np.cumsum(end) - end
    d = occ_incl - end_excl
    open_ = d - d.min()
    starts = np.arange(nblocks) * SLOTS_PER_BLOCK
    pending = open_[starts] - occ[starts]
    end2 = np.concatenate([end, end])
    cum2 = np.cumsum(end2)
    for b in np.nonzero(pending)[0]:
        i0 = starts[b]
        base = cum2[i0] - end2[i0]
        t = int(np.searchsorted(cum2, base + pending[b], side="left"))
        out[b] = t - i0 + 1
    return out


def check_compatible(a: FilterParams, b: FilterParams) -> None:
    if a.fingerprint_bits != b.fingerprint_bits:
        raise IncompatibleParams(
            f"fingerprint widths differ ({a.fingerprint_bits} vs {b.fingerprint_bits})")
    if a.hash_seed != b.hash_seed or a.hash_id != b.hash_id:
        raise IncompatibleParams("hash functions or seeds differ")
    if a.value_bits != b.value_bits:
        raise IncompatibleParams(f"value widths differ ({a.value_bits} vs {b.value_bits})")


def quotient_bits_for(count: int, p: FilterParams, at_least: int) -> int:
    q = max(at_least, MIN_QUOTIENT_BITS)
    while math.floor(p.max_load_factor * (1 << q)) < count:
        q += 1
    return q


def merge_cores(a: FilterCore, b: FilterCore) -> FilterCore:
    """Multiset union of two cores, merge-sorting their enumerations."""
    check_compatible(a.params, b.params)
    total = a.count + b.count
    q = quotient_bits_for(total, a.params, max(a.params.quotient_bits, b.params.quotient_bits))
    r = a.params.fingerprint_bits - q
    if r < 1:
        raise RemainderExhausted(f"{total} items need q={q}, leaving no remainder bits")
    out = FilterCore(replace(a.params, quotient_bits=q, remainder_bits=r))
    fa, va = a._k.enumerate()
    fb, vb = b._k.enumerate()
    ins = out._k.insert
    for raw, val in heapq.merge(zip(fa, va), zip(fb, vb), key=lambda e: e[0]):
        ins(raw, val)
    return out
