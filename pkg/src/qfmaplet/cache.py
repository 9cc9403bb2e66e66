"""Summary-cache routing: per-peer filters versus one key -> peer-set maplet.

Every peer caches a set of keys. The filter path keeps one presence filter per
peer and must probe all of them on a lookup. The maplet path keeps a single
multiset maplet whose instances carry a one-bit peer set; one probe returns
the union of the peers that may hold the key.

Between refreshes each peer records its churn in a :class:`DeltaMaplet`: a
merged-slot maplet of signed counts (+1 per add, -1 per delete). Adding and
then deleting a key inside one period cancels to zero and the slot vanishes,
so only net changes are shipped, serialized in the compact format.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from qfmaplet.core import FilterParams
from qfmaplet.errors import DomainError, Underflow
from qfmaplet.hashing import DEFAULT_SEED, XXH3Hasher
from qfmaplet.maplet import Maplet, Mode
from qfmaplet.values import BitsetValue, DeltaCounterValue, PresenceValue


def _hash64(keys, seed: int) -> np.ndarray:
    return XXH3Hasher(seed).fingerprints_int(np.asarray(keys, dtype=np.uint64), 64)


class DeltaMaplet:
    """Net adds/deletes of one peer since its last refresh."""

    def __init__(self, fingerprint_bits: int, seed: int = DEFAULT_SEED, value_bits: int = 8,
                 capacity: int = 64):
        base = FilterParams.for_capacity(capacity, 0.5)
        q = min(base.quotient_bits, fingerprint_bits - 1)
        params = FilterParams(q, fingerprint_bits - q, value_bits, hash_seed=seed)
        self.maplet = Maplet(value_type=DeltaCounterValue(value_bits), mode=Mode.MERGED,
                             params=params)

    @property
    def fingerprint_bits(self) -> int:
        return self.maplet.params.fingerprint_bits

    def add(self, fp: int) -> None:
        self.maplet.insert_fingerprint(fp, self.maplet.value_type.encode(1))

    def delete(self, fp: int) -> None:
        self.maplet.delete_fingerprint(fp, self.maplet.value_type.encode(1))

    def entries(self) -> list[tuple[int, int]]:
        """(fingerprint, net count) pairs, all nonzero."""
        return list(self.maplet.items())

    def __len__(self):
        return len(self.maplet)

    def to_bytes(self) -> bytes:
        return self.maplet.to_bytes(compact=True)

    @classmethod
    def from_bytes(cls, data: bytes) -> DeltaMaplet:
        m = Maplet.from_bytes(data)
        if not isinstance(m.value_type, DeltaCounterValue):
            raise DomainError("not a delta maplet")
        out = cls.__new__(cls)
        out.maplet = m
        return out


def new_global_maplet(capacity: int, epsilon: float, width: int,
                      seed: int = DEFAULT_SEED) -> Maplet:
    return Maplet(capacity, epsilon, BitsetValue(width), Mode.MULTISET, seed=seed)


def apply_delta(global_maplet: Maplet, peer: int, delta: DeltaMaplet) -> None:
    """Fold one peer's delta into the global peer-set maplet.

    A positive net count adds that many instances tagged with the peer; a
    negative one removes that many of the peer's instances. Deletes of a
    fingerprint the receiver holds no instance of (for this peer) are dropped:
    the receiver may have joined after the matching add. Holding some but too
    few instances means the delta is malformed and raises :class:`Underflow`.
    """
    if delta.fingerprint_bits != global_maplet.params.fingerprint_bits:
        raise DomainError("delta and global maplet use different fingerprint widths")
    bit = global_maplet.value_type.encode({peer})
    for fp, net in delta.entries():
        if net > 0:
            for _ in range(net):
                global_maplet.insert_fingerprint(fp, bit)
            continue
        k = global_maplet.core.kernel
        first, n = k.find(fp)
        mine = [first + i for i in range(n) if k.get_value(first + i) == bit]
        if not mine:
            continue
        if len(mine) < -net:
            raise Underflow(f"delta removes {-net} instances of {fp:#x} for peer {peer}, "
                            f"only {len(mine)} held")
        for _ in range(-net):
            global_maplet.delete_fingerprint(fp, bit)


def build_global(caches: list[set[int]], capacity: int, epsilon: float, width: int,
                 seed: int = DEFAULT_SEED) -> Maplet:
    m = new_global_maplet(capacity, epsilon, width, seed)
    p = m.params.fingerprint_bits
    mask = np.uint64((1 << p) - 1)
    for peer, cache in enumerate(caches):
        if cache:
            fps = _hash64(sorted(cache), seed) & mask
            m.insert_fingerprints(fps, np.full(len(fps), 1 << peer, dtype=np.uint64))
    return m


def build_peer_filter(cache: Iterable[int], capacity: int, epsilon: float,
                      seed: int = DEFAULT_SEED) -> Maplet:
    f = Maplet(capacity, epsilon, PresenceValue(), Mode.MULTISET, seed=seed)
    keys = sorted(cache)
    if keys:
        f.insert_fingerprints(_hash64(keys, seed) & np.uint64((1 << f.params.fingerprint_bits) - 1))
    return f


@dataclass
class PeerNetwork:
    """Peers with their caches plus both kinds of routing summary."""

    n_peers: int = 8
    cache_size: int = 2000
    universe: int = 200_000
    churn: int = 20
    refresh_period: int = 1
    eps_filter: float = 2**-8
    eps_maplet: float = 2**-8
    width: int = 0  # bitset width; 0 means one bit per peer
    seed: int = DEFAULT_SEED
    caches: list[set[int]] = field(default_factory=list)

    def __post_init__(self):
        if self.width == 0:
            self.width = self.n_peers
        if not 1 <= self.n_peers <= self.width <= 64:
            raise ValueError("need 1 <= peers <= bitset width <= 64")
        if self.refresh_period < 1:
            raise ValueError("refresh period must be >= 1")
        if self.cache_size * self.n_peers > self.universe:
            raise ValueError("universe too small for the caches")
        self.rng = np.random.default_rng(self.seed)
        if not self.caches:
            self.caches = [set(self.rng.choice(self.universe, self.cache_size, replace=False)
                               .tolist()) for _ in range(self.n_peers)]
        cap = self.n_peers * self.cache_size
        self.global_maplet = build_global(self.caches, cap, self.eps_maplet, self.width,
                                          self.seed)
        self.filters = [build_peer_filter(c, self.cache_size, self.eps_filter, self.seed)
                        for c in self.caches]
        self._p = self.global_maplet.params.fingerprint_bits
        self._mask = (1 << self._p) - 1
        self.deltas = [self.new_delta() for _ in range(self.n_peers)]
        self.probes = {"filter": 0, "maplet": 0}

    def new_delta(self) -> DeltaMaplet:
        return DeltaMaplet(self._p, self.seed, capacity=max(16, 2 * self.churn))

    def fingerprint(self, key: int) -> int:
        return int(_hash64([key], self.seed)[0]) & self._mask

    # -- routing ------------------------------------------------------------------

    def route_filters(self, key: int) -> set[int]:
        out = set()
        h = int(_hash64([key], self.seed)[0])
        for peer, f in enumerate(self.filters):
            self.probes["filter"] += 1
            if f.core.kernel.find(h & ((1 << f.params.fingerprint_bits) - 1))[1]:
                out.add(peer)
        return out

    def route_maplet(self, key: int) -> set[int]:
        self.probes["maplet"] += 1
        v = self.global_maplet.query_fingerprint(self.fingerprint(key))
        return set() if v is None else set(v)

    def route_lookup(self, key: int) -> tuple[set[int], set[int]]:
        """(filter-path candidates, maplet-path candidates)."""
        return self.route_filters(key), self.route_maplet(key)

    def route_batch(self, keys: np.ndarray) -> tuple[list[set], list[set]]:
        h = _hash64(keys, self.seed)
        f_out = [set() for _ in range(len(keys))]
        for peer, f in enumerate(self.filters):
            hit = f.count_matches(h & np.uint64((1 << f.params.fingerprint_bits) - 1))
            for i in np.nonzero(hit)[0].tolist():
                f_out[i].add(peer)
        self.probes["filter"] += len(keys) * self.n_peers
        counts, vals = self.global_maplet.lookup_batch(h & np.uint64(self._mask))
        self.probes["maplet"] += len(keys)
        m_out, pos, vl = [], 0, vals.tolist()
        for c in counts.tolist():
            acc = 0
            for v in vl[pos:pos + c]:
                acc |= v
            pos += c
            m_out.append(set(self.global_maplet.value_type.decode(acc)))
        return f_out, m_out

    # -- churn and refresh ----------------------------------------------------------

    def churn_round(self) -> None:
        """Each peer evicts ``churn`` keys and admits ``churn`` new ones."""
        for peer, cache in enumerate(self.caches):
            d = self.deltas[peer]
            n = min(self.churn, len(cache))
            evict = self.rng.choice(sorted(cache), n, replace=False).tolist() if n else []
            for key in evict:
                cache.discard(key)
                d.delete(self.fingerprint(key))
            added = 0
            while added < self.churn:
                key = int(self.rng.integers(self.universe))
                if key in cache:
                    continue
                cache.add(key)
                d.add(self.fingerprint(key))
                added += 1

    def refresh(self) -> dict:
        """Ship every peer's summary; returns bytes per path for this refresh."""
        delta_bytes = 0
        for peer, d in enumerate(self.deltas):
            wire = d.to_bytes()
            delta_bytes += len(wire)
            apply_delta(self.global_maplet, peer, DeltaMaplet.from_bytes(wire))
            self.deltas[peer] = self.new_delta()
        self.filters = [build_peer_filter(c, self.cache_size, self.eps_filter, self.seed)
                        for c in self.caches]
        filter_bytes = sum(len(f.to_bytes()) for f in self.filters)
        return {"delta_bytes": delta_bytes, "filter_bytes": filter_bytes}

    def rebuild_global(self) -> Maplet:
        return build_global(self.caches, self.n_peers * self.cache_size, self.eps_maplet,
                            self.width, self.seed)

    def summary_bits(self) -> dict:
        return {"filter": sum(f.core.space_bits() for f in self.filters),
                "maplet": self.global_maplet.core.space_bits()}


def summary_bytes(net: PeerNetwork, path: str) -> int:
    """Bytes one refresh ships: full filters, or the pending compact deltas."""
    if path == "filter":
        return sum(len(f.to_bytes()) for f in net.filters)
    if path == "maplet":
        return sum(len(d.to_bytes()) for d in net.deltas)
    raise ValueError("path must be 'filter' or 'maplet'")


def same_instances(a: Maplet, b: Maplet) -> bool:
    """Equal multisets of (fingerprint, payload) instances."""
    fa, va = a.enumerate_arrays()
    fb, vb = b.enumerate_arrays()
    if len(fa) != len(fb):
        return False
    oa = np.lexsort((va, fa))
    ob = np.lexsort((vb, fb))
    return bool(np.array_equal(fa[oa], fb[ob]) and np.array_equal(va[oa], vb[ob]))


@dataclass
class CacheReport:
    rounds: int
    peers: int
    lookups: int
    filter_probes_per_lookup: float
    maplet_probes_per_lookup: float
    filter_false_forwards_per_lookup: float
    maplet_false_forwards_per_lookup: float
    maplet_false_forward_lookup_rate: float
    missed_holders: int
    consistency_violations: int
    mean_delta_bytes: float
    mean_filter_bytes: float
    filter_bits: int
    maplet_bits: int

    def rows(self):
        yield from asdict(self).items()


def simulate(net: PeerNetwork, rounds: int, lookups_per_round: int = 1000,
             check_every: int = 1) -> CacheReport:
    """Run churn rounds, refreshing every ``refresh_period``; after each
    refresh compare the incremental global maplet with a rebuild and route a
    batch of lookups through both paths."""
    f_probes0, m_probes0 = net.probes["filter"], net.probes["maplet"]
    lookups = violations = missed = 0
    f_false = m_false = m_false_lookups = 0
    delta_b, filter_b, refreshes = [], [], 0
    for r in range(1, rounds + 1):
        net.churn_round()
        if r % net.refresh_period:
            continue
        sizes = net.refresh()
        refreshes += 1
        delta_b.append(sizes["delta_bytes"])
        filter_b.append(sizes["filter_bytes"])
        if refreshes % check_every == 0 and not same_instances(net.global_maplet,
                                                               net.rebuild_global()):
            violations += 1
        keys = net.rng.integers(net.universe, size=lookups_per_round)
        f_sets, m_sets = net.route_batch(keys)
        for key, fs, ms in zip(keys.tolist(), f_sets, m_sets):
            truth = {p for p, c in enumerate(net.caches) if key in c}
            if not truth <= fs or not truth <= ms:
                missed += 1
            f_false += len(fs - truth)
            extra = len(ms - truth)
            m_false += extra
            m_false_lookups += extra > 0
        lookups += len(keys)
    lk = max(lookups, 1)
    bits = net.summary_bits()
    return CacheReport(
        rounds=rounds, peers=net.n_peers, lookups=lookups,
        filter_probes_per_lookup=(net.probes["filter"] - f_probes0) / lk,
        maplet_probes_per_lookup=(net.probes["maplet"] - m_probes0) / lk,
        filter_false_forwards_per_lookup=f_false / lk,
        maplet_false_forwards_per_lookup=m_false / lk,
        maplet_false_forward_lookup_rate=m_false_lookups / lk,
        missed_holders=missed,
        consistency_violations=violations,
        mean_delta_bytes=float(np.mean(delta_b)) if delta_b else 0.0,
        mean_filter_bytes=float(np.mean(filter_b)) if filter_b else 0.0,
        filter_bits=bits["filter"], maplet_bits=bits["maplet"],
    )
