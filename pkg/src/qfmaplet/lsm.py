"""LSM query-routing simulator: per-SSTable filters versus per-level maplets.

Nothing is read from disk. The simulator lays keys out the way a compaction
policy would, builds real filters and maplets over them, replays a query
workload, and charges one probe per filter or maplet consulted and one storage
read per SSTable visited.

Layout (levels numbered from 1, newest data in level 1):

* size-tiered: level ``i`` holds ``g`` SSTables of ``keys_per_sstable *
  g**(i-1)`` keys each, newest first;
* leveled: level ``i`` is one sorted run of ``keys_per_sstable * g**i`` keys
  cut into ``g**i`` SSTables by key range, so fence pointers pick exactly one
  SSTable per level.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np

from qfmaplet.hashing import DEFAULT_SEED, XXH3Hasher
from qfmaplet.maplet import Maplet, Mode
from qfmaplet.values import IdSetValue, PresenceValue

LEVELED = "leveled"
SIZE_TIERED = "size-tiered"


@dataclass(frozen=True)
class LsmConfig:
    g: int = 8
    h: int = 3
    keys_per_sstable: int = 1024
    policy: str = SIZE_TIERED
    present_fraction: float = 0.0
    distribution: str = "uniform"
    zipf_s: float = 1.1
    eps_f: float = 2**-10
    eps_m: float | None = None
    probe_cost: float = 1.0
    read_cost: float = 100.0
    paged: bool = False
    idset_encoding: str = "index"
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        if self.g < 2:
            raise ValueError("growth factor g must be >= 2")
        if self.h < 1:
            raise ValueError("level count h must be >= 1")
        if self.policy not in (LEVELED, SIZE_TIERED):
            raise ValueError(f"policy must be {LEVELED!r} or {SIZE_TIERED!r}")
        if self.distribution not in ("uniform", "zipf"):
            raise ValueError("distribution must be 'uniform' or 'zipf'")
        if not 0.0 <= self.present_fraction <= 1.0:
            raise ValueError("present_fraction must be in [0, 1]")
        if self.keys_per_sstable < 1:
            raise ValueError("keys_per_sstable must be positive")

    @property
    def maplet_epsilon(self) -> float:
        if self.eps_m is not None:
            return self.eps_m
        if self.policy == LEVELED:
            return self.eps_f
        return equal_memory(self.eps_f, self.g)[0]

    def level_sstables(self, i: int) -> int:
        return self.g if self.policy == SIZE_TIERED else self.g ** i

    def sstable_keys(self, i: int) -> int:
        if self.policy == SIZE_TIERED:
            return self.keys_per_sstable * self.g ** (i - 1)
        return self.keys_per_sstable

    @property
    def total_keys(self) -> int:
        return sum(self.level_sstables(i) * self.sstable_keys(i) for i in range(1, self.h + 1))


def levels_for(n: int, g: int) -> int:
    """h = ceil(log_g n), the level count needed to hold n items."""
    if n <= 1:
        return 1
    h = max(1, math.ceil(math.log(n, g) - 1e-12))
    return h


def analytic_costs(config: LsmConfig) -> tuple[int, int]:
    """(write amplification, read multiplicity) for the configured policy."""
    g, h = config.g, config.h
    if config.policy == LEVELED:
        return g * h, h
    return h, g * h


def equal_memory(eps_f: float, g: int, encoding: str = "index") -> tuple[float, int]:
    """Maplet error rate and id width that spend the same bits as g filters.

    A probe of g filters each at eps_f errs with probability about g*eps_f, so
    one maplet at that rate matches it. Its fingerprints are log2 g bits
    shorter, and those bits pay for the SSTable id.
    """
    if g < 1:
        raise ValueError("g must be positive")
    if g == 1:
        return eps_f, 0
    bits = math.ceil(math.log2(g)) if encoding == "index" else g
    return g * eps_f, bits


@dataclass
class LsmIndexes:
    config: LsmConfig
    # level -> list of per-SSTable filters, newest first
    filters: list[list[Maplet]]
    # level -> one maplet
    maplets: list[Maplet]
    # sorted key-range boundaries per level (leveled only)
    fences: list[np.ndarray]
    keys: np.ndarray
    level_of: np.ndarray
    table_of: np.ndarray

    def filter_bits(self) -> int:
        return sum(f.core.space_bits() for lvl in self.filters for f in lvl)

    def maplet_bits(self) -> int:
        return sum(m.core.space_bits() for m in self.maplets)


def _hash64(keys: np.ndarray, seed: int) -> np.ndarray:
    return XXH3Hasher(seed).fingerprints_int(keys, 64)


def _mask(h: np.ndarray, p: int) -> np.ndarray:
    return h & np.uint64((1 << p) - 1)


def make_dataset(config: LsmConfig, rng: np.random.Generator) -> np.ndarray:
    """Distinct present keys in random order."""
    n = config.total_keys
    keys = np.unique(rng.integers(0, 1 << 62, size=int(n * 1.01) + 16, dtype=np.uint64))
    while len(keys) < n:
        more = rng.integers(0, 1 << 62, size=n, dtype=np.uint64)
        keys = np.unique(np.concatenate([keys, more]))
    return rng.permutation(keys)[:n]


def build_index(config: LsmConfig, keys: np.ndarray | None = None) -> LsmIndexes:
    """Per-SSTable filters and per-level maplets over the same key layout."""
    rng = np.random.default_rng(config.seed)
    if keys is None:
        keys = make_dataset(config, rng)
    keys = np.asarray(keys, dtype=np.uint64)
    if len(keys) != config.total_keys:
        raise ValueError(f"layout needs {config.total_keys} keys, got {len(keys)}")
    h64 = _hash64(keys, config.seed)
    level_of = np.empty(len(keys), dtype=np.int64)
    table_of = np.empty(len(keys), dtype=np.int64)
    filters, maplets, fences = [], [], []
    eps_m = config.maplet_epsilon
    lo = 0
    for i in range(1, config.h + 1):
        t, per = config.level_sstables(i), config.sstable_keys(i)
        idx = np.arange(lo, lo + t * per)
        lo += t * per
        level_of[idx] = i
        if config.policy == LEVELED:
            # key-range partitioning; fence pointers are the first key of each table
            order = idx[np.argsort(keys[idx], kind="stable")]
            tables = np.repeat(np.arange(t), per)
            table_of[order] = tables
            fences.append(keys[order][::per].copy())
        else:
            table_of[idx] = np.repeat(np.arange(t), per)
            fences.append(np.empty(0, dtype=np.uint64))
        level_filters = []
        for j in range(t):
            members = idx[table_of[idx] == j]
            f = Maplet(per, config.eps_f, PresenceValue(), Mode.MULTISET, seed=config.seed)
            f.insert_fingerprints(_mask(h64[members], f.params.fingerprint_bits))
            level_filters.append(f)
        filters.append(level_filters)
        n_level = t * per
        if config.policy == LEVELED:
            m = Maplet(n_level, eps_m, PresenceValue(), Mode.MULTISET, seed=config.seed)
            m.insert_fingerprints(_mask(h64[idx], m.params.fingerprint_bits))
        else:
            vt = IdSetValue(t, config.idset_encoding)
            mode = Mode.MULTISET if config.idset_encoding == "index" else Mode.MERGED
            m = Maplet(n_level, eps_m, vt, mode, seed=config.seed)
            payloads = (table_of[idx].astype(np.uint64) if config.idset_encoding == "index"
                        else np.uint64(1) << table_of[idx].astype(np.uint64))
            m.insert_fingerprints(_mask(h64[idx], m.params.fingerprint_bits), payloads)
        maplets.append(m)
    return LsmIndexes(config, filters, maplets, fences, keys, level_of, table_of)


@dataclass
class SimReport:
    queries: int
    present_queries: int
    filter_probes: float
    filter_reads: float
    filter_wasted_reads: float
    maplet_probes: float
    maplet_reads: float
    maplet_wasted_reads: float
    filter_bits: int
    maplet_bits: int
    filter_bits_per_key: float
    maplet_bits_per_key: float
    write_amp: int
    read_mult: int
    filter_cost: float
    maplet_cost: float
    max_filter_probes: int
    max_maplet_probes: int
    missed: int = 0
    expected: dict = field(default_factory=dict)

    def rows(self):
        for k, v in asdict(self).items():
            if k == "expected":
                for ek, ev in v.items():
                    yield f"expected_{ek}", ev
            else:
                yield k, v


def make_queries(index: LsmIndexes, q: int, rng: np.random.Generator):
    """Query keys and, for present ones, their row in the dataset (else -1)."""
    cfg = index.config
    n_present = int(rng.binomial(q, cfg.present_fraction)) if 0 < cfg.present_fraction < 1 \
        else (q if cfg.present_fraction == 1 else 0)
    n = len(index.keys)
    if cfg.distribution == "zipf" and n_present:
        weights = 1.0 / np.arange(1, n + 1) ** cfg.zipf_s
        rows = rng.choice(n, size=n_present, p=weights / weights.sum())
    else:
        rows = rng.integers(0, n, size=n_present)
    absent = _absent_keys(index.keys, q - n_present, rng)
    keys = np.concatenate([index.keys[rows], absent])
    target = np.concatenate([rows, np.full(q - n_present, -1)])
    perm = rng.permutation(q)
    return keys[perm], target[perm]


def _absent_keys(present: np.ndarray, n: int, rng: np.random.Generator) -> np.ndarray:
    out = np.empty(0, dtype=np.uint64)
    while len(out) < n:
        draw = rng.integers(0, 1 << 62, size=n - len(out), dtype=np.uint64)
        out = np.concatenate([out, draw[~np.isin(draw, present)]])
    return out


def _level_table(index: LsmIndexes, level: int, keys: np.ndarray) -> np.ndarray:
    """SSTable chosen by the fence pointers of a leveled level."""
    f = index.fences[level - 1]
    return np.maximum(np.searchsorted(f, keys, side="right") - 1, 0)


def run_queries(index: LsmIndexes, q: int, seed: int | None = None) -> SimReport:
    cfg = index.config
    rng = np.random.default_rng(cfg.seed + 1 if seed is None else seed)
    keys, target = make_queries(index, q, rng)
    h64 = _hash64(keys, cfg.seed)
    t_level = np.where(target >= 0, index.level_of[np.maximum(target, 0)], 0)
    t_table = np.where(target >= 0, index.table_of[np.maximum(target, 0)], -1)

    # baseline: filters newest-first; stop at the first true hit
    f_probes = np.zeros(q, dtype=np.int64)
    f_reads = np.zeros(q, dtype=np.int64)
    f_wasted = np.zeros(q, dtype=np.int64)
    found = np.zeros(q, dtype=bool)
    for i, level in enumerate(index.filters, 1):
        if cfg.policy == LEVELED:
            chosen = _level_table(index, i, keys)
            for j, flt in enumerate(level):
                sel = np.nonzero(~found & (chosen == j))[0]
                _probe_filter(flt, h64, sel, (t_level == i) & (t_table == j),
                              f_probes, f_reads, f_wasted, found)
        else:
            for j in range(len(level)):  # table 0 is the newest
                sel = np.nonzero(~found)[0]
                _probe_filter(level[j], h64, sel, (t_level == i) & (t_table == j),
                              f_probes, f_reads, f_wasted, found)
    f_missed = int(np.sum((target >= 0) & ~found))

    # maplet path: one probe per level, one read per returned id
    m_probes = np.zeros(q, dtype=np.int64)
    m_reads = np.zeros(q, dtype=np.int64)
    m_wasted = np.zeros(q, dtype=np.int64)
    found = np.zeros(q, dtype=bool)
    for i, m in enumerate(index.maplets, 1):
        sel = np.nonzero(~found)[0]
        if len(sel) == 0:
            break
        m_probes[sel] += 1
        if cfg.paged:
            m_reads[sel] += 1
        counts, vals = m.lookup_batch(_mask(h64[sel], m.params.fingerprint_bits))
        here = (t_level[sel] == i)
        if cfg.policy == LEVELED:
            hit = counts > 0
            m_reads[sel[hit]] += 1
            true = hit & here
            m_wasted[sel[hit & ~here]] += 1
            found[sel[true]] = True
            continue
        ids = _id_sets(m, counts, vals)
        for r, s in enumerate(sel.tolist()):
            got = ids[r]
            if not got:
                continue
            tt = int(t_table[s]) if here[r] else -1
            # newest first; stop on the true table
            visited = 0
            for j in sorted(got):
                visited += 1
                if j == tt:
                    found[s] = True
                    break
            m_reads[s] += visited
            m_wasted[s] += visited - (1 if found[s] else 0)
    m_missed = int(np.sum((target >= 0) & ~found))

    wa, rm = analytic_costs(cfg)
    fb, mb = index.filter_bits(), index.maplet_bits()
    n = len(index.keys)
    mean = lambda a: float(a.mean()) if q else 0.0  # noqa: E731
    rep = SimReport(
        queries=q,
        present_queries=int(np.sum(target >= 0)),
        filter_probes=mean(f_probes), filter_reads=mean(f_reads),
        filter_wasted_reads=mean(f_wasted),
        maplet_probes=mean(m_probes), maplet_reads=mean(m_reads),
        maplet_wasted_reads=mean(m_wasted),
        filter_bits=fb, maplet_bits=mb,
        filter_bits_per_key=fb / n, maplet_bits_per_key=mb / n,
        write_amp=wa, read_mult=rm,
        filter_cost=cfg.probe_cost * mean(f_probes) + cfg.read_cost * mean(f_reads),
        maplet_cost=cfg.probe_cost * mean(m_probes) + cfg.read_cost * mean(m_reads),
        max_filter_probes=int(f_probes.max()) if q else 0,
        max_maplet_probes=int(m_probes.max()) if q else 0,
        missed=f_missed + m_missed,
        expected=expected_costs(cfg, index),
    )
    return rep


def _probe_filter(flt, h64, sel, is_true, probes, reads, wasted, found):
    if len(sel) == 0:
        return
    probes[sel] += 1
    hit = flt.count_matches(_mask(h64[sel], flt.params.fingerprint_bits)) > 0
    reads[sel[hit]] += 1
    true = hit & is_true[sel]
    wasted[sel[hit & ~true]] += 1
    found[sel[true]] = True


def _id_sets(m: Maplet, counts: np.ndarray, vals: np.ndarray) -> list[frozenset]:
    out = []
    pos = 0
    fold = m.value_type.fold
    vl = vals.tolist()
    for c in counts.tolist():
        out.append(fold(vl[pos:pos + c]) if c else frozenset())
        pos += c
    return out


def _fpr(m: Maplet) -> float:
    """Chance that an absent key matches at least one stored fingerprint."""
    return 1.0 - math.exp(-len(m) / 2.0 ** m.params.fingerprint_bits)


def expected_costs(config: LsmConfig, index: LsmIndexes | None = None) -> dict:
    """Closed-form per-query expectations for the configured workload.

    Probe counts ignore false positives (they never stop a search). Read
    counts for absent keys sum the per-structure false-positive rates; when an
    index is given, the rates come from its actual fill, else from the
    configured epsilons.
    """
    g, h = config.g, config.h
    pf = config.present_fraction
    wa, rm = analytic_costs(config)
    # absent keys visit everything
    absent_f_probes = float(rm)
    absent_m_probes = float(h)
    if index is not None:
        if config.policy == LEVELED:
            # fence pointers pick one table per level; average its rate
            f_reads = sum(np.mean([_fpr(f) for f in lvl]) for lvl in index.filters)
        else:
            f_reads = sum(_fpr(f) for lvl in index.filters for f in lvl)
        m_reads = sum(_fpr(m) for m in index.maplets)
    else:
        f_reads = rm * config.eps_f
        m_reads = h * config.maplet_epsilon
    if config.paged:
        m_reads += h
    # present keys: weight each (level, table position) by its key share
    n = config.total_keys
    pf_probes = pm_probes = 0.0
    for i in range(1, h + 1):
        t, per = config.level_sstables(i), config.sstable_keys(i)
        for pos in range(t):  # pos 0 = newest
            share = per / n
            if config.policy == LEVELED:
                pf_probes += share * i
            else:
                pf_probes += share * (g * (i - 1) + pos + 1)
            pm_probes += share * i
    return {
        "filter_probes": (1 - pf) * absent_f_probes + pf * pf_probes,
        "maplet_probes": (1 - pf) * absent_m_probes + pf * pm_probes,
        "absent_filter_reads": f_reads,
        "absent_maplet_reads": m_reads,
    }


def simulate(config: LsmConfig, queries: int) -> SimReport:
    return run_queries(build_index(config), queries)


def parse_config_text(text: str) -> dict:
    """``key = value`` lines (``#`` comments) into LsmConfig keyword arguments."""
    types = {f: t for f, t in LsmConfig.__annotations__.items()}
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        k = k.replace("-", "_")
        if k not in types:
            raise ValueError(f"line {lineno}: unknown setting {k!r}")
        t = types[k]
        if "bool" in t:
            out[k] = v.lower() in ("1", "true", "yes", "on")
        elif t == "int":
            out[k] = int(v)
        elif "float" in t:
            out[k] = _parse_float(v)
        else:
            out[k] = v
    return out


def _parse_float(v: str) -> float:
    v = v.strip()
    if v.startswith("2^") or v.startswith("2**"):
        return 2.0 ** float(v.split("^")[-1] if "^" in v else v[3:])
    return float(v)

