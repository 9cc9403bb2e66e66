"""Reference models the library is checked against."""

from __future__ import annotations

from collections import Counter, defaultdict


class MultimapOracle:
    """Sorted multimap fingerprint -> multiset of payloads."""

    def __init__(self):
        self.d: dict[int, Counter] = defaultdict(Counter)

    def insert(self, fp, payload):
        self.d[fp][payload] += 1

    def remove(self, fp, payload):
        c = self.d[fp]
        c[payload] -= 1
        if c[payload] == 0:
            del c[payload]
        if not c:
            del self.d[fp]

    def find_all(self, fp) -> list[int]:
        return sorted(self.d.get(fp, Counter()).elements())

    def items(self) -> list[tuple[int, int]]:
        return sorted((f, p) for f, c in self.d.items() for p in c.elements())

    def __len__(self):
        return sum(sum(c.values()) for c in self.d.values())


def fold_map(pairs, combine):
    out = {}
    for k, v in pairs:
        out[k] = combine(out[k], v) if k in out else v
    return out


_COMP = str.maketrans("ACGT", "TGCA")


def naive_kmers(seq: str, k: int, canonical: bool = True) -> list[str]:
    """Every ACGT-only window of length k, canonicalized by string comparison.

    With A<C<G<T the lexicographic order of strings equals the numeric order
    of their 2-bit encodings, so min() here agrees with the word minimum.
    """
    seq = seq.upper()
    out = []
    for i in range(len(seq) - k + 1):
        w = seq[i : i + k]
        if set(w) <= set("ACGT"):
            if canonical:
                w = min(w, w.translate(_COMP)[::-1])
            out.append(w)
    return out


def naive_parse(text: str) -> list[tuple[str, str]]:
    """Line-based FASTA/FASTQ reader with no error handling."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        return []
    out = []
    if lines[0].startswith(">"):
        for ln in lines:
            if ln.startswith(">"):
                out.append([ln[1:].strip(), ""])
            else:
                out[-1][1] += ln.strip()
    else:
        for i in range(0, len(lines), 4):
            out.append([lines[i][1:].strip(), lines[i + 1].strip()])
    return [tuple(r) for r in out]


def random_genome(rng, n: int) -> str:
    return "".join(rng.choice(list("ACGT"), size=n))
