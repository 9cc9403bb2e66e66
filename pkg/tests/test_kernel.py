"""Kernel-level checks shared by the compiled and pure-Python backends."""

import numpy as np
import pytest

from qfmaplet import _backend
from qfmaplet._kernel_py import CapacityExceeded
from qfmaplet.core import derive_offsets

from conftest import kernel_state
from oracles import MultimapOracle


def check(k, oracle):
    fps, vals = k.enumerate()
    assert list(fps) == sorted(fps)
    assert sorted(zip(fps, vals)) == oracle.items()
    assert k.count == len(oracle)
    derived = derive_offsets(k.occupieds, k.runends, k.nslots)
    assert np.array_equal(derived, np.frombuffer(k.offsets, dtype=np.uint32))


def random_ops(k, oracle, rng, nops, universe, vbits=8):
    live = []
    for _ in range(nops):
        if live and (rng.random() < 0.4 or k.count >= k.max_items):
            i = int(rng.integers(len(live)))
            fp, payload = live.pop(i)
            first, n = k.find(fp)
            pos = next(first + j for j in range(n) if k.get_value(first + j) == payload)
            k.delete(fp, pos)
            oracle.remove(fp, payload)
        else:
            fp = int(rng.integers(universe))
            payload = int(rng.integers(1 << vbits))
            k.insert(fp, payload)
            oracle.insert(fp, payload)
            live.append((fp, payload))


@pytest.mark.parametrize("seed", range(8))
def test_random_insert_delete_matches_oracle(kernel_cls, seed):
    rng = np.random.default_rng(seed)
    k = kernel_cls(7, 6, 121)
    oracle = MultimapOracle()
    for _ in range(20):
        random_ops(k, oracle, rng, 60, 1 << 13)
        check(k, oracle)
        for fp in rng.integers(1 << 13, size=30).tolist():
            assert sorted(k.values(fp)) == oracle.find_all(fp)


def test_wraparound_cluster(kernel_cls):
    k = kernel_cls(6, 4, 60)
    oracle = MultimapOracle()
    # every fingerprint homes in the last two slots, so the cluster wraps
    for i in range(40):
        fp = ((62 + i % 2) << 4) | (i % 16)
        k.insert(fp, i)
        oracle.insert(fp, i)
    check(k, oracle)
    for i in range(0, 40, 3):
        fp = ((62 + i % 2) << 4) | (i % 16)
        first, n = k.find(fp)
        pos = next(first + j for j in range(n) if k.get_value(first + j) == i)
        k.delete(fp, pos)
        oracle.remove(fp, i)
        check(k, oracle)


def test_insert_into_empty_lands_on_home(kernel_cls):
    k = kernel_cls(8, 8, 200)
    assert k.insert((37 << 8) | 5, 1) == 37


def test_capacity_enforced(kernel_cls):
    k = kernel_cls(6, 4, 3)
    for i in range(3):
        k.insert(i, 0)
    with pytest.raises(CapacityExceeded):
        k.insert(99, 0)


def test_insert_delete_restores_bit_exact_state(kernel_cls, rng):
    k = kernel_cls(8, 8, 240)
    for fp in rng.integers(1 << 16, size=150).tolist():
        k.insert(fp, 3)
    before = kernel_state(k)
    fp = int(rng.integers(1 << 16))
    pos = k.insert(fp, 77)
    first, n = k.find(fp)
    pos = next(first + j for j in range(n) if k.get_value(first + j) == 77)
    k.delete(fp, pos)
    assert kernel_state(k) == before


def test_batch_paths_agree_with_point_queries(kernel_cls, rng):
    k = kernel_cls(10, 10, 970)
    fps = rng.integers(1 << 20, size=900, dtype=np.uint64)
    for i, f in enumerate(fps.tolist()):
        k.insert(f, i % 256)
    probes = np.concatenate([fps[:300], rng.integers(1 << 20, size=300, dtype=np.uint64)])
    counts = np.frombuffer(k.count_matches(probes), dtype=np.int64)
    c2, vals = k.lookup_batch(probes)
    c2 = np.frombuffer(c2, dtype=np.int64)
    vals = np.frombuffer(vals, dtype=np.uint64).tolist()
    assert np.array_equal(counts, c2)
    pos = 0
    for f, c in zip(probes.tolist(), counts.tolist()):
        assert k.find(f)[1] == c
        assert vals[pos:pos + c] == k.values(f)
        pos += c


def test_add_batch_saturates_and_stops_at_capacity(kernel_cls):
    k = kernel_cls(6, 6, 5)
    fps = np.array([1, 2, 1, 1, 3, 4, 5, 6, 7], dtype=np.uint64)
    nxt = k.add_batch(fps, 0, 2, 5)
    # 1,2,3,4,5 fill the table; 6 does not fit
    assert nxt == 7
    assert k.values(1) == [5]
    assert k.values(2) == [2]


@pytest.mark.skipif(_backend.COMPILED_KERNEL is None, reason="compiled kernel not built")
@pytest.mark.parametrize("seed", range(5))
def test_backends_bit_identical(seed):
    rng_a = np.random.default_rng(seed)
    rng_b = np.random.default_rng(seed)
    a = _backend.COMPILED_KERNEL(7, 5, 121)
    b = _backend.PURE_KERNEL(7, 5, 121)
    oa, ob = MultimapOracle(), MultimapOracle()
    for _ in range(10):
        random_ops(a, oa, rng_a, 50, 1 << 12)
        random_ops(b, ob, rng_b, 50, 1 << 12)
        assert kernel_state(a) == kernel_state(b)


def test_backend_selection_env(tmp_path):
    import subprocess
    import sys

    out = subprocess.run(
        [sys.executable, "-c", "import qfmaplet; print(qfmaplet.BACKEND)"],
        env={"QFMAPLET_PURE_PYTHON": "1", "PATH": "/usr/bin:/bin"},
        capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
