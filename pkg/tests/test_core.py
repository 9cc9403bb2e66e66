import math
from collections import Counter

import numpy as np
import pytest

from qfmaplet.core import (
    BLOCK_OVERHEAD_BITS,
    METADATA_BITS_PER_SLOT,
    FilterCore,
    FilterParams,
    Fingerprint,
    hash_key,
    merge_cores,
)
from qfmaplet.errors import (
    CapacityExceeded,
    IncompatibleParams,
    MultipleInstances,
    NotFound,
    RemainderExhausted,
)

from conftest import kernel_state
from oracles import MultimapOracle


def make(q=8, r=8, v=8, kernel_cls=None, **kw):
    params = FilterParams(q, r, v, **kw)
    k = None if kernel_cls is None else kernel_cls(q, r, params.max_items)
    return FilterCore(params, kernel=k)


def items(core):
    return sorted((f.raw, v) for f, v in core.enumerate())


# -- params --------------------------------------------------------------------


def test_params_validation():
    with pytest.raises(ValueError):
        FilterParams(5, 8)
    with pytest.raises(ValueError):
        FilterParams(8, 0)
    with pytest.raises(ValueError):
        FilterParams(8, 57)
    with pytest.raises(ValueError):
        FilterParams(8, 8, 65)
    p = FilterParams(10, 8)
    assert p.fingerprint_bits == 18 and p.nslots == 1024
    assert p.max_items == math.floor(0.95 * 1024)


def test_for_capacity_derivation():
    p = FilterParams.for_capacity(100_000, 2**-10)
    assert p.fingerprint_bits == math.ceil(math.log2(100_000 / 2**-10))
    assert p.max_items >= 100_000
    assert p.quotient_bits == 17 and p.remainder_bits == 10


def test_fingerprint_equality_by_raw():
    a = Fingerprint(0b1010_0011, 4, 4)
    b = Fingerprint(0b1010_0011, 5, 3)
    assert a == b
    assert a.home_slot == 0b1010 and a.remainder == 0b0011


# -- insert / find_all ---------------------------------------------------------


def test_insert_into_empty_uses_home_slot(kernel_cls):
    c = make(kernel_cls=kernel_cls)
    fp = c.fingerprint((200 << 8) | 17)
    assert c.insert_fp(fp, 5) == fp.home_slot
    assert c.find_all(fp) == [(fp.home_slot, 5)]


def test_duplicates_are_kept(kernel_cls):
    c = make(kernel_cls=kernel_cls)
    c.insert_fp(1234, 1)
    c.insert_fp(1234, 2)
    assert sorted(c.payloads(1234)) == [1, 2]
    assert c.find_all(999) == []


def test_find_all_matches_oracle_q12(kernel_cls, rng):
    c = make(12, 10, 16, kernel_cls=kernel_cls)
    oracle = MultimapOracle()
    fps = rng.integers(1 << 22, size=1000).tolist()
    for f in fps:
        pl = int(rng.integers(1 << 16))
        c.insert_fp(f, pl)
        oracle.insert(f, pl)
    for f in fps:
        assert sorted(c.payloads(f)) == oracle.find_all(f)
    c.check_invariants()


def test_find_all_oracle_1e4(kernel_cls, rng):
    c = make(14, 8, 8, kernel_cls=kernel_cls)
    oracle = MultimapOracle()
    for f in rng.integers(1 << 22, size=10_000).tolist():
        c.insert_fp(f, f & 0xFF)
        oracle.insert(f, f & 0xFF)
    for f in list(oracle.d)[:3000] + rng.integers(1 << 22, size=10_000).tolist():
        assert sorted(c.payloads(f)) == oracle.find_all(f)
    assert items(c) == oracle.items()


def test_capacity_exceeded_and_payload_width():
    c = make(6, 4, 2)
    for i in range(c.params.max_items):
        c.insert_fp(i, 0)
    with pytest.raises(CapacityExceeded):
        c.insert_fp(100, 0)
    with pytest.raises(ValueError):
        make(6, 4, 2).insert_fp(1, 4)
    with pytest.raises(ValueError):
        make(6, 4, 2).insert_fp(1 << 10, 0)


# -- remove_one ------------------------------------------------------------------


def test_remove_roundtrip_is_bit_exact(kernel_cls, rng):
    c = make(kernel_cls=kernel_cls)
    for f in rng.integers(1 << 16, size=200).tolist():
        c.insert_fp(f, 1)
    before = kernel_state(c.kernel)
    c.insert_fp(4242, 9)
    assert c.remove_one(4242, lambda p: p == 9) == 9
    assert kernel_state(c.kernel) == before


def test_remove_one_selects_by_payload(kernel_cls):
    c = make(kernel_cls=kernel_cls)
    c.insert_fp(77, 1)
    c.insert_fp(77, 2)
    c.remove_one(77, lambda p: p == 1)
    assert c.payloads(77) == [2]
    with pytest.raises(NotFound):
        c.remove_one(77, lambda p: p == 1)
    with pytest.raises(NotFound):
        c.remove_one(78)


def test_remove_one_takes_lowest_slot(kernel_cls):
    c = make(kernel_cls=kernel_cls)
    for p in (5, 6, 7):
        c.insert_fp(300, p)
    assert c.remove_one(300, lambda p: p >= 6) == 6


@pytest.mark.parametrize("seed", range(3))
def test_interleaved_ops_match_oracle_every_step(kernel_cls, seed):
    rng = np.random.default_rng(seed)
    c = make(10, 6, 8, kernel_cls=kernel_cls)
    oracle = MultimapOracle()
    live = []
    for step in range(10_000):
        if live and (rng.random() < 0.45 or len(c) >= c.params.max_items):
            f, p = live.pop(int(rng.integers(len(live))))
            n0 = len(c)
            c.remove_one(f, lambda x, p=p: x == p)
            oracle.remove(f, p)
            assert len(c) == n0 - 1
        else:
            f, p = int(rng.integers(1 << 16)), int(rng.integers(256))
            n0 = len(c)
            c.insert_fp(f, p)
            oracle.insert(f, p)
            live.append((f, p))
            assert len(c) == n0 + 1
        if step % 500 == 0:
            assert items(c) == oracle.items()
            c.check_invariants()
    assert items(c) == oracle.items()


# -- update_in_place -----------------------------------------------------------------


def test_update_in_place(kernel_cls, rng):
    c = make(kernel_cls=kernel_cls)
    assert c.update_in_place(5, lambda p: p + 1) == 0
    assert len(c) == 0
    c.insert_fp(5, 3)
    assert c.update_in_place(5, lambda p: p + 2) == 1
    assert c.payloads(5) == [5]
    c.insert_fp(5, 1)
    with pytest.raises(MultipleInstances):
        c.update_in_place(5, lambda p: p)


def test_update_in_place_matches_map_fold(kernel_cls, rng):
    c = make(10, 8, 16, kernel_cls=kernel_cls)
    truth = {}
    for _ in range(1000):
        f, d = int(rng.integers(1 << 10)), int(rng.integers(1, 50))
        if c.update_in_place(f, lambda p, d=d: p + d) == 0:
            c.insert_fp(f, d)
        truth[f] = truth.get(f, 0) + d
    assert items(c) == sorted(truth.items())


# -- enumerate --------------------------------------------------------------------------


def test_enumerate_order_and_count(kernel_cls):
    c = make(kernel_cls=kernel_cls)
    assert list(c.enumerate()) == []
    for f in (900, 10, 900):
        c.insert_fp(f, 0)
    raws = [f.raw for f, _ in c.enumerate()]
    assert raws == [10, 900, 900]


# -- resize -----------------------------------------------------------------------------------


def test_resize_empty():
    c = make(8, 8, 0).resize_double()
    assert c.params.quotient_bits == 9 and c.params.remainder_bits == 7 and len(c) == 0


def test_resize_preserves_stream(rng):
    c = make(11, 10, 8)
    for f in rng.integers(1 << 21, size=1000).tolist():
        c.insert_fp(f, f & 0xFF)
    before = items(c)
    d = c.resize_double()
    assert d.params.fingerprint_bits == c.params.fingerprint_bits
    assert d.params.hash_seed == c.params.hash_seed
    assert items(d) == before


def test_resize_q8_to_q14_under_insertion(rng):
    c = make(8, 14, 8)
    oracle = MultimapOracle()
    while c.params.quotient_bits < 14:
        while len(c) < c.params.max_items:
            f, p = int(rng.integers(1 << 22)), int(rng.integers(256))
            c.insert_fp(f, p)
            oracle.insert(f, p)
        c = c.resize_double()
        assert items(c) == oracle.items()
        c.check_invariants()
    assert c.params.quotient_bits == 14


def test_resize_exhausts_remainder():
    c = make(6, 1, 0)
    with pytest.raises(RemainderExhausted):
        c.resize_double()


# -- merge ------------------------------------------------------------------------------------


def test_merge_identity_and_union(rng):
    a, b = make(), make()
    for f in rng.integers(1 << 16, size=100).tolist():
        a.insert_fp(f, 1)
    assert items(merge_cores(a, b)) == items(a)
    x, y = make(), make()
    x.insert_fp(1, 1)
    y.insert_fp(2, 2)
    assert items(merge_cores(x, y)) == [(1, 1), (2, 2)]


def test_merge_random_equals_multiset_union(rng):
    a, b = make(11, 8, 8), make(11, 8, 8)
    for c in (a, b):
        for f in rng.integers(1 << 19, size=1000).tolist():
            c.insert_fp(f, int(rng.integers(256)))
    m = merge_cores(a, b)
    assert items(m) == sorted(items(a) + items(b))
    assert len(m) <= m.params.max_items
    m.check_invariants()


def test_merge_incompatible():
    with pytest.raises(IncompatibleParams):
        merge_cores(make(8, 8), make(8, 9))
    with pytest.raises(IncompatibleParams):
        merge_cores(make(8, 8), make(8, 8, hash_seed=1))


# -- space ------------------------------------------------------------------------------------


def test_space_bits_declared_layout():
    assert METADATA_BITS_PER_SLOT == 2.125 and BLOCK_OVERHEAD_BITS == 8
    assert make(10, 8, 0).space_bits() == 10496
    assert make(10, 8, 16).space_bits() - make(10, 8, 0).space_bits() == 1024 * 16


def test_space_bits_per_item_at_95_percent_load(rng):
    c = make(14, 9, 0)
    fps = np.unique(rng.integers(1 << 23, size=20_000))[: c.params.max_items]
    for f in fps.tolist():
        c.insert_fp(f, 0)
    assert len(c) == c.params.max_items
    assert c.space_bits() / len(c) <= 12.0


def test_perfect_hash_injective(rng):
    c = make(10, 8, 8)
    for f in rng.integers(1 << 18, size=900).tolist():
        c.insert_fp(f, 0)
    slots = [s for f in set(f.raw for f, _ in c.enumerate()) for s, _ in c.find_all(f)]
    assert len(slots) == len(set(slots)) == len(c)


def test_hash_key_deterministic():
    p = FilterParams(10, 12)
    assert hash_key(b"abc", p) == hash_key(b"abc", p)
    assert hash_key(b"abc", p).raw < 1 << 22


def test_run_order_check(rng):
    c = make(9, 4, 0)
    for f in rng.integers(1 << 13, size=400).tolist():
        c.insert_fp(f, 0)
    counts = Counter(f.raw for f, _ in c.enumerate())
    assert sum(counts.values()) == 400
    c.check_invariants()
