"""Approximate key-value maps with one-sided error.

A :class:`Maplet` pairs a :class:`~qfmaplet.core.FilterCore` with a value type.
In merged-slot mode every distinct fingerprint owns one slot whose payload is
the ⊕-fold of everything inserted under it. In multiset mode every insert gets
a fresh slot and queries fold the payloads of all matching slots, which allows
deleting individual (key, value) pairs even when ⊕ has no inverse.
"""

from __future__ import annotations

import enum
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from typing import Any, Iterator

import numpy as np

from qfmaplet.core import (
    FilterCore,
    FilterParams,
    check_compatible,
    merge_cores,
    quotient_bits_for,
)
from qfmaplet.errors import (
    IncompatibleParams,
    MultipleInstances,
    NotFound,
    RemainderExhausted,
    UnsupportedDelete,
)
from qfmaplet.hashing import DEFAULT_SEED, XXH3Hasher
from qfmaplet.values import CounterValue, ValueType


class Mode(enum.IntEnum):
    MERGED = 0
    MULTISET = 1


def key_bytes(key) -> bytes:
    """Canonical byte form of a key: bytes as-is, str as UTF-8, int as 8 LE bytes."""
    if isinstance(key, bytes):
        return key
    if isinstance(key, str):
        return key.encode()
    if isinstance(key, (int, np.integer)):
        return int(key).to_bytes(8, "little")
    if isinstance(key, (bytearray, memoryview)):
        return bytes(key)
    raise TypeError(f"unsupported key type {type(key).__name__}")


class Maplet:
    """Space-efficient approximate map.

    ``query(k)`` returns ``None`` only when ``k`` was definitely never stored,
    and otherwise a value that dominates the true one (for ordered value
    types). Build one from an expected capacity and error rate::

        m = Maplet(capacity=10_000, epsilon=2**-10, value_type=CounterValue(16))
        m.insert(b"ACGT", 1)
    """

    def __init__(self, capacity: int = 1024, epsilon: float = 2**-8,
                 value_type: ValueType | None = None, mode: Mode = Mode.MERGED, *,
                 seed: int = DEFAULT_SEED, alpha: float = 0.95,
                 hash_id: int = XXH3Hasher.hash_id, params: FilterParams | None = None,
                 resize_threshold: float | None = None, diagnostics: bool = False,
                 core: FilterCore | None = None):
        self.value_type = value_type if value_type is not None else CounterValue(16)
        self.mode = Mode(mode)
        self._epsilon = None
        if core is not None:
            params = core.params
        elif params is None:
            params = FilterParams.for_capacity(capacity, epsilon, self.value_type.value_bits,
                                               alpha, hash_seed=seed, hash_id=hash_id)
            self._epsilon = epsilon
        if params.value_bits != self.value_type.value_bits:
            raise IncompatibleParams("filter value width differs from the value type's")
        self.core = core if core is not None else FilterCore(params)
        self.resize_threshold = min(resize_threshold or params.max_load_factor,
                                    params.max_load_factor)
        self.diagnostics = diagnostics
        self._hasher = params.hasher()
        self._refresh()

    def _refresh(self):
        p = self.core.params
        self._p = p.fingerprint_bits
        self._resize_at = math.floor(self.resize_threshold * p.nslots)
        self._k = self.core.kernel

    def __repr__(self):
        p = self.params
        return (f"Maplet({self.value_type!r}, mode={self.mode.name}, p={p.fingerprint_bits}, "
                f"q={p.quotient_bits}, items={len(self)})")

    # -- basic properties ---------------------------------------------------

    @property
    def params(self) -> FilterParams:
        return self.core.params

    @property
    def item_count(self) -> int:
        return self.core.count

    def __len__(self):
        return self.core.count

    @property
    def epsilon(self) -> float:
        """Configured error rate, or the union bound at maximum load."""
        if self._epsilon is not None:
            return self._epsilon
        return self.params.max_items / 2.0 ** self._p

    @property
    def hasher(self):
        return self._hasher

    def fingerprint(self, key) -> int:
        return self._hasher.fingerprint(key_bytes(key), self._p)

    def fingerprints(self, keys) -> np.ndarray:
        return self._hasher.fingerprints([key_bytes(k) for k in keys], self._p)

    # -- resizing -------------------------------------------------------------

    def resize(self) -> None:
        self.core = self.core.resize_double()
        self._refresh()

    def _make_room(self):
        while self.core.count + 1 > self._resize_at:
            self.resize()

    # -- fingerprint-level operations -----------------------------------------

    def insert_fingerprint(self, fp: int, payload: int) -> None:
        k = self._k
        if self.mode is Mode.MULTISET:
            self._make_room()
            self._k.insert(fp, payload)
            return
        first, n = k.find(fp)
        vt = self.value_type
        if n == 0:
            if vt.has_inverse and payload == vt.identity_payload:
                return
            self._make_room()
            self._k.insert(fp, payload)
        elif n == 1:
            new = vt.merge_payloads(k.get_value(first), payload)
            if vt.has_inverse and new == vt.identity_payload:
                k.delete(fp, first)
            else:
                k.set_value(first, new)
        else:
            raise MultipleInstances(f"fingerprint {fp:#x} stored {n} times in merged-slot mode")

    def query_fingerprint(self, fp: int):
        payloads = self._k.values(fp)
        if not payloads:
            return None
        return self.value_type.fold(payloads)

    def delete_fingerprint(self, fp: int, payload: int) -> None:
        k = self._k
        vt = self.value_type
        if self.mode is Mode.MULTISET:
            first, n = k.find(fp)
            for i in range(n):
                if k.get_value(first + i) == payload:
                    k.delete(fp, first + i)
                    return
            raise NotFound(f"no instance of fingerprint {fp:#x} holds that value")
        if not vt.has_inverse:
            raise UnsupportedDelete(
                f"{vt.name} values have no inverse; use multiset mode to support deletes")
        first, n = k.find(fp)
        if n > 1:
            raise MultipleInstances(f"fingerprint {fp:#x} stored {n} times in merged-slot mode")
        old = k.get_value(first) if n else vt.identity_payload
        new = vt.subtract_payloads(old, payload)
        if n == 0:
            if new != vt.identity_payload:
                self._make_room()
                self._k.insert(fp, new)
        elif new == vt.identity_payload:
            k.delete(fp, first)
        else:
            k.set_value(first, new)

    # -- key-level operations ----------------------------------------------

    def insert(self, key, value: Any = None) -> None:
        if value is None:
            value = 1 if isinstance(self.value_type, CounterValue) else self.value_type.identity
        self.insert_fingerprint(self.fingerprint(key), self.value_type.encode(value))

    def query(self, key):
        """⊕ of every value stored under key's fingerprint, or None if absent."""
        return self.query_fingerprint(self.fingerprint(key))

    def query_detailed(self, key) -> tuple[Any, int]:
        """(value, number of matching slots); requires ``diagnostics=True``.

        In multiset mode with each key inserted once, the slot count for an
        absent key is the number of stored keys it collides with.
        """
        if not self.diagnostics:
            raise RuntimeError("construct the maplet with diagnostics=True")
        fp = self.fingerprint(key)
        payloads = self._k.values(fp)
        value = self.value_type.fold(payloads) if payloads else None
        return value, len(payloads)

    def __contains__(self, key) -> bool:
        return self._k.find(self.fingerprint(key))[1] > 0

    def __getitem__(self, key):
        v = self.query(key)
        if v is None:
            raise KeyError(key)
        return v

    def delete(self, key, value: Any = None) -> None:
        if value is None:
            value = 1 if isinstance(self.value_type, CounterValue) else self.value_type.identity
        self.delete_fingerprint(self.fingerprint(key), self.value_type.encode(value))

    # -- batch paths ----------------------------------------------------------

    def add_counts(self, fps: np.ndarray, inc: int = 1) -> None:
        """Add ``inc`` to the count of every fingerprint in ``fps``.

        Runs inside the kernel without the GIL; requires merged-slot mode and
        a saturating counter.
        """
        vt = self.value_type
        if not (isinstance(vt, CounterValue) and vt.saturate and self.mode is Mode.MERGED):
            for fp in fps:
                self.insert_fingerprint(int(fp), vt.encode(inc))
            return
        fps = np.ascontiguousarray(fps, dtype=np.uint64)
        inc = min(inc, vt.cap)
        i = 0
        while i < len(fps):
            self._k.max_items = min(self._resize_at, self.params.max_items)
            i = self._k.add_batch(fps, i, inc, vt.cap)
            if i < len(fps):
                self.resize()
        self._k.max_items = self.params.max_items

    def insert_fingerprints(self, fps: np.ndarray, payloads=None) -> None:
        """Batch insert; in multiset mode the table is grown once up front."""
        fps = np.ascontiguousarray(fps, dtype=np.uint64)
        if payloads is None:
            payloads = np.zeros(len(fps), dtype=np.uint64)
        payloads = np.ascontiguousarray(payloads, dtype=np.uint64)
        if self.mode is Mode.MERGED:
            for f, v in zip(fps.tolist(), payloads.tolist()):
                self.insert_fingerprint(f, v)
            return
        while self.core.count + len(fps) > self._resize_at:
            self.resize()
        order = np.argsort(fps, kind="stable")
        ins = self._k.insert
        for f, v in zip(fps[order].tolist(), payloads[order].tolist()):
            ins(f, v)

    def count_matches(self, fps: np.ndarray) -> np.ndarray:
        fps = np.ascontiguousarray(fps, dtype=np.uint64)
        return np.frombuffer(self._k.count_matches(fps), dtype=np.int64)

    def lookup_batch(self, fps: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Match counts per fingerprint and the concatenated matching payloads."""
        fps = np.ascontiguousarray(fps, dtype=np.uint64)
        counts, vals = self._k.lookup_batch(fps)
        return np.frombuffer(counts, dtype=np.int64), np.frombuffer(vals, dtype=np.uint64)

    # -- enumeration, merge, stats --------------------------------------------

    def items(self) -> Iterator[tuple[int, Any]]:
        """(fingerprint, decoded value) per stored slot, in fingerprint order."""
        fps, vals = self._k.enumerate()
        decode = self.value_type.decode
        for fp, v in zip(fps, vals):
            yield fp, decode(v)

    def enumerate_arrays(self):
        return self.core.enumerate_arrays()

    def same_shape(self, other: Maplet) -> bool:
        return (self.mode == other.mode and self.value_type == other.value_type)

    def merge(self, other: Maplet) -> Maplet:
        return merge(self, other)

    def copy(self) -> Maplet:
        fps, vals = self._k.enumerate()
        out = self._empty_like(self.params.quotient_bits)
        ins = out._k.insert
        for fp, v in zip(fps, vals):
            ins(fp, v)
        return out

    def _empty_like(self, quotient_bits: int) -> Maplet:
        p = self.params
        r = p.fingerprint_bits - quotient_bits
        if r < 1:
            raise RemainderExhausted(f"q={quotient_bits} leaves no remainder bits")
        params = replace(p, quotient_bits=quotient_bits, remainder_bits=r)
        out = Maplet(value_type=self.value_type, mode=self.mode, params=params,
                     resize_threshold=self.resize_threshold, diagnostics=self.diagnostics)
        out._epsilon = self._epsilon
        return out

    def stats(self) -> dict:
        p = self.params
        bits = self.core.space_bits()
        n = len(self)
        return {
            "items": n,
            "mode": self.mode.name.lower(),
            "value_type": self.value_type.name,
            "fingerprint_bits": p.fingerprint_bits,
            "quotient_bits": p.quotient_bits,
            "remainder_bits": p.remainder_bits,
            "value_bits": p.value_bits,
            "slots": p.nslots,
            "load_factor": n / p.nslots,
            "total_bits": bits,
            "bits_per_item": bits / n if n else None,
            "epsilon": self.epsilon,
        }

    # -- serialization ----------------------------------------------------------

    def to_bytes(self, compact: bool = False) -> bytes:
        from qfmaplet import serialize

        return serialize.dumps(self, compact=compact)

    @classmethod
    def from_bytes(cls, data: bytes) -> Maplet:
        from qfmaplet import serialize

        return serialize.loads(data)

    def serialize(self, sink, compact: bool = False) -> None:
        sink.write(self.to_bytes(compact=compact))

    @classmethod
    def deserialize(cls, source) -> Maplet:
        from qfmaplet import serialize

        return serialize.load(source)


def _check_mergeable(a: Maplet, b: Maplet):
    if not a.same_shape(b):
        raise IncompatibleParams("maplets differ in mode or value type")
    check_compatible(a.params, b.params)


def merge(a: Maplet, b: Maplet) -> Maplet:
    """Maplet whose query(k) is query(a, k) ⊕ query(b, k) for every k."""
    _check_mergeable(a, b)
    if a.mode is Mode.MULTISET:
        core = merge_cores(a.core, b.core)
        out = a._empty_like(core.params.quotient_bits)
        out.core = core
        out._refresh()
        return out
    fa, va = a.core.enumerate_arrays()
    fb, vb = b.core.enumerate_arrays()
    fps = np.concatenate([fa, fb])
    vals = np.concatenate([va, vb])
    order = np.argsort(fps, kind="stable")
    fps, vals = fps[order], vals[order]
    vt = a.value_type
    merged_f, merged_v = [], []
    i, n = 0, len(fps)
    while i < n:
        f = int(fps[i])
        v = int(vals[i])
        i += 1
        while i < n and int(fps[i]) == f:
            v = vt.merge_payloads(v, int(vals[i]))
            i += 1
        if vt.has_inverse and v == vt.identity_payload:
            continue
        merged_f.append(f)
        merged_v.append(v)
    q = quotient_bits_for(len(merged_f), replace(a.params, max_load_factor=a.resize_threshold),
                          max(a.params.quotient_bits, b.params.quotient_bits))
    out = a._empty_like(q)
    ins = out._k.insert
    for f, v in zip(merged_f, merged_v):
        ins(f, v)
    return out


def build_counting_maplet(template: Maplet, fps: np.ndarray, shards: int = 1,
                          threads: int = 1, inc: int = 1) -> Maplet:
    """Count fingerprints into a fresh maplet shaped like ``template``.

    Fingerprints are split by their top ``log2(shards)`` bits into independent
    sub-maplets over the remaining bits, filled concurrently (the kernel
    releases the GIL), then concatenated in shard order. The result does not
    depend on ``shards`` or ``threads``.
    """
    fps = np.ascontiguousarray(fps, dtype=np.uint64)
    shard_bits = max(0, math.ceil(math.log2(shards))) if shards > 1 else 0
    p = template.params.fingerprint_bits
    if shard_bits == 0 or p - shard_bits < 7:
        out = template._empty_like(template.params.quotient_bits)
        out.add_counts(fps, inc)
        return out
    sub_p = p - shard_bits
    top = fps >> np.uint64(sub_p)
    low_mask = np.uint64((1 << sub_p) - 1)
    parts = [fps[top == s] & low_mask for s in range(1 << shard_bits)]

    def build(part):
        distinct = len(np.unique(part))
        sub_params = FilterParams.for_capacity(
            max(distinct, 1), 0.5, template.params.value_bits,
            template.params.max_load_factor, hash_seed=template.params.hash_seed,
            hash_id=template.params.hash_id)
        q = sub_params.quotient_bits
        r = sub_p - q
        if r < 1:
            raise RemainderExhausted("too many shards for the fingerprint width")
        m = Maplet(value_type=template.value_type, mode=Mode.MERGED,
                   params=replace(sub_params, quotient_bits=q, remainder_bits=r))
        m.add_counts(part, inc)
        return m

    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        subs = list(pool.map(build, parts))
    total = sum(len(m) for m in subs)
    q = quotient_bits_for(total, replace(template.params,
                                         max_load_factor=template.resize_threshold),
                          template.params.quotient_bits)
    out = template._empty_like(q)
    ins = out._k.insert
    for s, m in enumerate(subs):
        high = s << sub_p
        sf, sv = m._k.enumerate()
        for f, v in zip(sf, sv):
            ins(high | f, v)
    return out
