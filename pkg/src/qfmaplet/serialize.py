"""Binary maplet file format (little-endian throughout, see docs/format.md).

Two layouts share one header:

* ``MPLT`` -- the full table: metadata bit vectors, block offsets and bit-packed
  ``(remainder, value)`` slot words.
* ``MPLC`` -- compact: only the stored ``(fingerprint, value)`` entries in
  fingerprint order. Its size is proportional to the item count, which makes
  it the wire format for small delta maplets.

Both end with a CRC32C of every preceding byte.
"""

from __future__ import annotations

import struct

import crc32c
import numpy as np

from qfmaplet.core import ALPHA_SCALE, FilterCore, FilterParams, derive_offsets
from qfmaplet.errors import FormatError, TruncatedStream
from qfmaplet.values import value_type_from_id

MAGIC_FULL = b"MPLT"
MAGIC_COMPACT = b"MPLC"
VERSION = 1
HEADER = struct.Struct("<4sHBBBQBBBBQH")
CRC = struct.Struct("<I")
_CHUNK = 1 << 15  # slots per packing chunk; keeps chunk bit counts byte-aligned


def _pack_fields(cols: list[tuple[np.ndarray, int]], n: int) -> bytes:
    """Bit-pack n records made of (array, width) fields, LSB first."""
    width = sum(w for _, w in cols)
    if width == 0 or n == 0:
        return b""
    out = []
    for lo in range(0, n, _CHUNK):
        hi = min(n, lo + _CHUNK)
        parts = []
        for arr, w in cols:
            if w == 0:
                continue
            a = np.ascontiguousarray(arr[lo:hi], dtype="<u8")
            bits = np.unpackbits(a.view(np.uint8).reshape(-1, 8), axis=1, bitorder="little")
            parts.append(bits[:, :w])
        out.append(np.packbits(np.hstack(parts).ravel(), bitorder="little"))
    return np.concatenate(out).tobytes()


def _unpack_fields(buf: bytes, widths: list[int], n: int) -> list[np.ndarray]:
    width = sum(widths)
    result = [np.zeros(n, dtype=np.uint64) for _ in widths]
    if width == 0 or n == 0:
        return result
    raw = np.frombuffer(buf, dtype=np.uint8)
    for lo in range(0, n, _CHUNK):
        hi = min(n, lo + _CHUNK)
        b0 = lo * width // 8
        b1 = (hi * width + 7) // 8
        bits = np.unpackbits(raw[b0:b1], bitorder="little")[: (hi - lo) * width]
        bits = bits.reshape(hi - lo, width)
        col = 0
        for i, w in enumerate(widths):
            if w == 0:
                continue
            padded = np.zeros((hi - lo, 64), dtype=np.uint8)
            padded[:, :w] = bits[:, col:col + w]
            result[i][lo:hi] = np.packbits(padded, axis=1, bitorder="little").view("<u8").ravel()
            col += w
    return result


def _packed_len(n: int, width: int) -> int:
    return (n * width + 7) // 8


def _header(m, magic: bytes) -> bytes:
    p = m.params
    return HEADER.pack(magic, VERSION, p.hash_id, int(m.mode), m.value_type.op_id,
                       p.hash_seed, p.fingerprint_bits, p.quotient_bits, p.remainder_bits,
                       p.value_bits, len(m), round(p.max_load_factor * ALPHA_SCALE))


def dumps(m, compact: bool = False) -> bytes:
    p = m.params
    if compact:
        fps, vals = m.core.enumerate_arrays()
        body = _pack_fields([(fps, p.fingerprint_bits), (vals, p.value_bits)], len(fps))
        data = _header(m, MAGIC_COMPACT) + body
    else:
        k = m.core.kernel
        occ = np.frombuffer(k.occupieds, dtype=np.uint64).astype("<u8")
        ends = np.frombuffer(k.runends, dtype=np.uint64).astype("<u8")
        offs = np.minimum(np.frombuffer(k.offsets, dtype=np.uint32), 0xFFFF).astype("<u2")
        slots = np.frombuffer(k.slots, dtype=np.uint64)
        body = _pack_fields([(slots[0::2], p.remainder_bits), (slots[1::2], p.value_bits)],
                            p.nslots)
        data = _header(m, MAGIC_FULL) + occ.tobytes() + ends.tobytes() + offs.tobytes() + body
    return data + CRC.pack(crc32c.crc32c(data))


def loads(data: bytes):
    from qfmaplet.maplet import Maplet, Mode

    data = bytes(data)
    if len(data) < HEADER.size + CRC.size:
        raise TruncatedStream(f"{len(data)} bytes is shorter than a maplet header")
    (magic, version, hash_id, mode, op_id, seed, p, q, r, v, count,
     alpha_fx) = HEADER.unpack_from(data, 0)
    if magic not in (MAGIC_FULL, MAGIC_COMPACT):
        raise FormatError(f"bad magic {magic!r}")
    if version != VERSION:
        raise FormatError(f"unsupported format version {version}")
    if p != q + r:
        raise FormatError(f"inconsistent fingerprint widths p={p} q={q} r={r}")
    try:
        params = FilterParams(q, r, v, alpha_fx / ALPHA_SCALE, seed, hash_id)
        params.hasher()
        vt = value_type_from_id(op_id, v)
        mode = Mode(mode)
    except ValueError as exc:
        raise FormatError(str(exc)) from None
    nslots = params.nslots
    nblocks = nslots // 64
    if magic == MAGIC_FULL:
        body_len = nblocks * (8 + 8 + 2) + _packed_len(nslots, r + v)
    else:
        body_len = _packed_len(count, p + v)
    expected = HEADER.size + body_len + CRC.size
    if len(data) < expected:
        raise TruncatedStream(f"expected {expected} bytes, got {len(data)}")
    if len(data) > expected:
        raise FormatError(f"{len(data) - expected} trailing bytes")
    (crc,) = CRC.unpack_from(data, expected - CRC.size)
    if crc != crc32c.crc32c(data[: expected - CRC.size]):
        raise FormatError("CRC32C mismatch")
    body = memoryview(data)[HEADER.size : expected - CRC.size]

    if magic == MAGIC_COMPACT:
        fps, vals = _unpack_fields(body, [p, v], count)
        if count > params.max_items:
            raise FormatError("item count exceeds table capacity")
        core = FilterCore(params)
        ins = core.kernel.insert
        for f, val in zip(fps.tolist(), vals.tolist()):
            ins(f, val)
        return Maplet(value_type=vt, mode=mode, core=core)

    occ = np.frombuffer(body, dtype="<u8", count=nblocks, offset=0)
    ends = np.frombuffer(body, dtype="<u8", count=nblocks, offset=8 * nblocks)
    offs = np.frombuffer(body, dtype="<u2", count=nblocks, offset=16 * nblocks)
    rems, vals = _unpack_fields(body[18 * nblocks :], [r, v], nslots)
    n_occ = int(np.unpackbits(occ.view(np.uint8)).sum())
    n_end = int(np.unpackbits(ends.view(np.uint8)).sum())
    if n_occ != n_end:
        raise FormatError("occupieds and runends disagree")
    derived = derive_offsets(occ.tobytes(), ends.tobytes(), nslots)
    if not np.array_equal(np.minimum(derived, 0xFFFF), offs):
        raise FormatError("block offsets inconsistent with run metadata")
    core = FilterCore(params)
    k = core.kernel
    _fill(k.occupieds, occ.astype(np.uint64))
    _fill(k.runends, ends.astype(np.uint64))
    _fill(k.offsets, derived.astype(np.uint32))
    interleaved = np.empty(2 * nslots, dtype=np.uint64)
    interleaved[0::2] = rems
    interleaved[1::2] = vals
    _fill(k.slots, interleaved)
    k.restore_count(count)
    got = len(k.enumerate()[0])
    if got != count:
        raise FormatError(f"header says {count} items, table holds {got}")
    return Maplet(value_type=vt, mode=mode, core=core)


def _fill(target, values: np.ndarray) -> None:
    memoryview(target).cast("B")[:] = values.tobytes()


def load(source):
    return loads(source.read())


def dump(m, sink, compact: bool = False) -> None:
    sink.write(dumps(m, compact=compact))
