"""Monte Carlo checks of the error rate and of the collision-depth tail."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from statistics import NormalDist

import numpy as np

from qfmaplet.hashing import DEFAULT_SEED, XXH3Hasher
from qfmaplet.maplet import Maplet, Mode
from qfmaplet.values import CounterValue, PresenceValue


def wilson_interval(successes: int, trials: int, confidence: float = 0.99) -> tuple[float, float]:
    if trials == 0:
        return 0.0, 1.0
    z = NormalDist().inv_cdf(0.5 + confidence / 2)
    p = successes / trials
    denom = 1 + z * z / trials
    centre = (p + z * z / (2 * trials)) / denom
    half = z * math.sqrt(p * (1 - p) / trials + z * z / (4 * trials * trials)) / denom
    return max(0.0, centre - half), min(1.0, centre + half)


def key_sets(n: int, probes: int, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Distinct present keys (top bit clear) and absent keys (top bit set)."""
    rng = np.random.default_rng(seed)
    present = np.unique(rng.integers(0, 1 << 63, size=n, dtype=np.uint64))
    while len(present) < n:
        more = rng.integers(0, 1 << 63, size=n - len(present), dtype=np.uint64)
        present = np.unique(np.concatenate([present, more]))
    absent = rng.integers(0, 1 << 63, size=probes, dtype=np.uint64) | np.uint64(1 << 63)
    return present, absent


def _fingerprints(m: Maplet, keys: np.ndarray, chunk: int = 1 << 20):
    h = XXH3Hasher(m.params.hash_seed)
    p = m.params.fingerprint_bits
    for lo in range(0, len(keys), chunk):
        yield h.fingerprints_int(keys[lo:lo + chunk], p)


@dataclass
class FprReport:
    n: int
    epsilon: float
    probes: int
    false_positives: int
    measured: float
    ci_low: float
    ci_high: float
    bound: float
    passed: bool
    bits_per_item: float | None

    def rows(self):
        yield from asdict(self).items()


def bench_fpr(n: int, epsilon: float, probes: int, seed: int = DEFAULT_SEED,
              slack: float = 1.5, confidence: float = 0.99) -> FprReport:
    """Insert n random keys, probe absent ones, report the non-⊥ fraction.

    ``passed`` holds when the measured rate is at most ``slack * epsilon``;
    the Wilson interval at ``confidence`` is reported alongside.
    """
    present, absent = key_sets(n, probes, seed)
    m = Maplet(max(n, 1), epsilon, PresenceValue(), Mode.MULTISET, seed=seed)
    for fps in _fingerprints(m, present):
        m.insert_fingerprints(fps)
    fp = 0
    for fps in _fingerprints(m, absent):
        fp += int(np.count_nonzero(m.count_matches(fps)))
    lo, hi = wilson_interval(fp, probes, confidence)
    measured = fp / probes if probes else 0.0
    return FprReport(n, epsilon, probes, fp, measured, lo, hi, slack * epsilon,
                     measured <= slack * epsilon, m.stats()["bits_per_item"])


@dataclass
class StrongReport:
    n: int
    epsilon: float
    probes: int
    histogram: dict
    tail: dict
    bounds: dict
    passed: bool

    def rows(self):
        for depth, count in sorted(self.histogram.items()):
            yield f"l={depth}", count
        for L, pr in sorted(self.tail.items()):
            yield f"Pr[l>={L}]", pr
        for L, b in sorted(self.bounds.items()):
            yield f"bound[l>={L}]", b
        yield "passed", self.passed


def bench_strong(n: int, epsilon: float, probes: int, seed: int = DEFAULT_SEED,
                 tolerance: float = 2.0) -> StrongReport:
    """Histogram of the collision depth l over absent-key probes.

    Every key is inserted once into a multiset-mode maplet, so the number of
    slots matching an absent key's fingerprint is exactly the number of
    stored keys it collides with. Passes when Pr[l >= L] <= tolerance**(L-1)
    * epsilon**L for L = 2 and 3.
    """
    present, absent = key_sets(n, probes, seed)
    m = Maplet(max(n, 1), epsilon, CounterValue(1), Mode.MULTISET, seed=seed,
               diagnostics=True)
    for fps in _fingerprints(m, present):
        m.insert_fingerprints(fps, np.ones(len(fps), dtype=np.uint64))
    hist: dict[int, int] = {}
    for fps in _fingerprints(m, absent):
        depth, count = np.unique(m.count_matches(fps), return_counts=True)
        for d, c in zip(depth.tolist(), count.tolist()):
            hist[d] = hist.get(d, 0) + c
    total = sum(hist.values())
    tail = {L: sum(c for d, c in hist.items() if d >= L) / total if total else 0.0
            for L in (1, 2, 3)}
    bounds = {L: tolerance ** (L - 1) * epsilon ** L for L in (2, 3)}
    passed = all(tail[L] <= bounds[L] for L in bounds)
    return StrongReport(n, epsilon, probes, hist, tail, bounds, passed)
