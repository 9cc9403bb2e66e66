"""Key hashing.

Two hash families are registered, each identified by the u8 id written to the
serialization header:

``XXH3`` (id 1)
    Seeded XXH3-64 over the key bytes, truncated to the low ``p`` bits.
``KMER_MIX`` (id 2)
    An invertible mix of an integer key within ``p`` bits. Distinct keys below
    ``2**p`` always get distinct fingerprints, which is what exact k-mer maps
    rely on, and :meth:`KmerMixHasher.invert` recovers the key.
"""

from __future__ import annotations

import numpy as np
import xxhash

DEFAULT_SEED = 0x5EED_0F_3A91E7


class XXH3Hasher:
    hash_id = 1
    name = "xxh3_64"

    def __init__(self, seed: int = DEFAULT_SEED):
        self.seed = seed & 0xFFFFFFFFFFFFFFFF

    def __repr__(self):
        return f"XXH3Hasher(seed={self.seed:#x})"

    def hash64(self, key: bytes) -> int:
        return xxhash.xxh3_64_intdigest(key, self.seed)

    def fingerprint(self, key: bytes, p: int) -> int:
        return xxhash.xxh3_64_intdigest(key, self.seed) & ((1 << p) - 1)

    def fingerprint_int(self, x: int, p: int) -> int:
        return xxhash.xxh3_64_intdigest(x.to_bytes(8, "little"), self.seed) & ((1 << p) - 1)

    def fingerprints(self, keys, p: int) -> np.ndarray:
        """Vectorised fingerprints for a sequence of byte strings."""
        h = xxhash.xxh3_64_intdigest
        seed = self.seed
        out = np.fromiter((h(k, seed) for k in keys), dtype=np.uint64)
        return out & np.uint64((1 << p) - 1)

    def fingerprints_int(self, xs, p: int) -> np.ndarray:
        buf = memoryview(np.ascontiguousarray(xs, dtype="<u8").tobytes())
        h = xxhash.xxh3_64_intdigest
        seed = self.seed
        out = np.fromiter((h(buf[i : i + 8], seed) for i in range(0, len(buf), 8)),
                          dtype=np.uint64, count=len(buf) // 8)
        return out & np.uint64((1 << p) - 1)


# Thomas Wang's 64-bit integer mix; every step is a bijection modulo 2**p.
_MIX_STEPS = (
    ("mul_not", (1 << 21) - 1),
    ("xorshift", 24),
    ("mul", 265),
    ("xorshift", 14),
    ("mul", 21),
    ("xorshift", 28),
    ("mul", (1 << 31) + 1),
)


class KmerMixHasher:
    hash_id = 2
    name = "wang_mix64_invertible"

    def __init__(self, seed: int = 0):
        self.seed = seed & 0xFFFFFFFFFFFFFFFF

    def __repr__(self):
        return f"KmerMixHasher(seed={self.seed:#x})"

    def fingerprint_int(self, x: int, p: int) -> int:
        mask = (1 << p) - 1
        x = (x ^ self.seed) & mask
        for kind, c in _MIX_STEPS:
            if kind == "mul_not":
                x = (x * c - 1) & mask  # == (~x + (x << 21)) mod 2**p
            elif kind == "mul":
                x = (x * c) & mask
            else:
                x ^= x >> c
        return x

    def invert(self, fp: int, p: int) -> int:
        mask = (1 << p) - 1
        x = fp & mask
        for kind, c in reversed(_MIX_STEPS):
            if kind == "mul_not":
                x = ((x + 1) * pow(c, -1, 1 << p)) & mask
            elif kind == "mul":
                x = (x * pow(c, -1, 1 << p)) & mask
            else:
                y = x
                for _ in range(p // c + 1):
                    y = x ^ (y >> c)
                x = y
        return (x ^ self.seed) & mask

    def fingerprint(self, key: bytes, p: int) -> int:
        return self.fingerprint_int(int.from_bytes(key, "little"), p)

    def fingerprints(self, keys, p: int) -> np.ndarray:
        return self.fingerprints_int(
            np.fromiter((int.from_bytes(k, "little") for k in keys), dtype=np.uint64), p)

    def fingerprints_int(self, xs, p: int) -> np.ndarray:
        mask = np.uint64((1 << p) - 1)
        x = (np.asarray(xs, dtype=np.uint64) ^ np.uint64(self.seed & ((1 << p) - 1))) & mask
        with np.errstate(over="ignore"):
            for kind, c in _MIX_STEPS:
                if kind == "mul_not":
                    x = (x * np.uint64(c) - np.uint64(1)) & mask
                elif kind == "mul":
                    x = (x * np.uint64(c)) & mask
                else:
                    x ^= x >> np.uint64(c)
        return x


HASHERS = {XXH3Hasher.hash_id: XXH3Hasher, KmerMixHasher.hash_id: KmerMixHasher}


def make_hasher(hash_id: int, seed: int):
    try:
        return HASHERS[hash_id](seed)
    except KeyError:
        raise ValueError(f"unknown hash function id {hash_id}") from None
