import io
import struct

import crc32c
import pytest

from qfmaplet import BitsetValue, CounterValue, DeltaCounterValue, Maplet, Mode, PresenceValue
from qfmaplet.errors import FormatError, TruncatedStream
from qfmaplet.serialize import HEADER, dumps, loads


def filled(rng, n=10_000, vt=None, mode=Mode.MERGED):
    vt = vt or CounterValue(12)
    m = Maplet(n, 2**-10, vt, mode)
    sample = {
        "counter": lambda k: 1 + k % 7,
        "presence": lambda k: True,
        "bitset": lambda k: {k % vt.value_bits},
        "delta": lambda k: (k % 5) - 2 or 1,
    }[vt.name]
    for k in rng.integers(0, 1 << 62, size=n).tolist():
        m.insert(k, sample(k))
    return m


def reseal(data: bytes) -> bytes:
    body = data[:-4]
    return body + struct.pack("<I", crc32c.crc32c(body))


@pytest.mark.parametrize("compact", [False, True])
def test_empty_roundtrip(compact):
    m = Maplet(100, 2**-8)
    out = loads(dumps(m, compact))
    assert out.params == m.params and len(out) == 0 and out.value_type == m.value_type


def test_empty_compact_is_header_only():
    data = dumps(Maplet(100, 2**-8), compact=True)
    assert len(data) == HEADER.size + 4 == 35
    assert data[:4] == b"MPLC"


@pytest.mark.parametrize("vt,mode", [
    (CounterValue(12), Mode.MERGED),
    (PresenceValue(), Mode.MERGED),
    (BitsetValue(8), Mode.MULTISET),
    (DeltaCounterValue(8), Mode.MERGED),
])
def test_roundtrip_bit_identical(rng, vt, mode):
    m = filled(rng, 10_000, vt, mode)
    data = dumps(m)
    out = loads(data)
    assert dumps(out) == data
    assert list(out.items()) == list(m.items())
    assert out.mode == m.mode and out.params == m.params
    compact = loads(dumps(m, compact=True))
    assert list(compact.items()) == list(m.items())


def test_stream_api(rng):
    m = filled(rng, 500)
    buf = io.BytesIO()
    m.serialize(buf)
    buf.seek(0)
    assert list(Maplet.deserialize(buf).items()) == list(m.items())


def test_header_layout_is_little_endian():
    m = Maplet(100, 2**-8, CounterValue(16), seed=0x0102030405060708)
    m.insert("a", 1)
    data = dumps(m)
    assert data[:4] == b"MPLT"
    assert data[4:6] == b"\x01\x00"
    assert data[9:17] == bytes(range(8, 0, -1))
    fields = HEADER.unpack_from(data)
    assert fields[10] == 1
    assert struct.unpack("<I", data[-4:])[0] == crc32c.crc32c(data[:-4])


def test_corrupted_crc_rejected(rng):
    data = bytearray(dumps(filled(rng, 200)))
    data[-1] ^= 1
    with pytest.raises(FormatError, match="CRC"):
        loads(bytes(data))
    data = bytearray(dumps(filled(rng, 200)))
    data[HEADER.size + 3] ^= 0x10
    with pytest.raises(FormatError):
        loads(bytes(data))


def test_truncated_and_trailing(rng):
    data = dumps(filled(rng, 200))
    with pytest.raises(TruncatedStream):
        loads(data[:-10])
    with pytest.raises(TruncatedStream):
        loads(data[:10])
    with pytest.raises(FormatError, match="trailing"):
        loads(data + b"\0")


def test_bad_magic_and_version(rng):
    data = dumps(filled(rng, 50))
    with pytest.raises(FormatError, match="magic"):
        loads(reseal(b"XXXX" + data[4:]))
    with pytest.raises(FormatError, match="version"):
        loads(reseal(data[:4] + b"\x09\x00" + data[6:]))


def test_inconsistent_metadata_rejected(rng):
    m = filled(rng, 300)
    data = bytearray(dumps(m))
    # flip an occupied bit without a matching runend
    data[HEADER.size] ^= 0x80
    with pytest.raises(FormatError):
        loads(reseal(bytes(data)))


def test_compact_item_count_checked(rng):
    data = bytearray(dumps(filled(rng, 50), compact=True))
    struct.pack_into("<Q", data, 21, 51)
    with pytest.raises(TruncatedStream):
        loads(reseal(bytes(data)))


@pytest.mark.parametrize("q,r,v", [(6, 1, 0), (10, 8, 0), (10, 9, 8), (12, 20, 16)])
def test_space_bits_equals_serialized_table(q, r, v):
    from qfmaplet.core import FilterParams

    m = Maplet(value_type=CounterValue(v) if v else PresenceValue(), params=FilterParams(q, r, v))
    body_bits = 8 * (len(dumps(m)) - HEADER.size - 4)
    # the packed slot words round up to a whole byte
    assert 0 <= body_bits - m.core.space_bits() < 8
