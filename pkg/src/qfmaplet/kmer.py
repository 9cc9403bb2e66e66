"""k-mer counting and colored k-mer indexes on top of maplets.

k-mers are packed two bits per base (A=0, C=1, G=2, T=3) into one integer
word, most significant base first, so words compare like the ACGT strings.
The canonical form of a k-mer is the smaller of the word and its reverse
complement's word.

In exact mode fingerprints come from :class:`~qfmaplet.hashing.KmerMixHasher`,
a bijection on ``p >= 2k`` bits, so distinct k-mers never collide and the
maplet answers exactly. Otherwise keys are hashed with XXH3 and counts carry
the usual one-sided error.
"""

from __future__ import annotations

import gzip
import io
import os
import re
from dataclasses import dataclass, field
from typing import IO, Iterable, Iterator

import numpy as np

from qfmaplet.core import FilterParams, quotient_bits_for
from qfmaplet.errors import ParseError, TooManyExperiments
from qfmaplet.hashing import DEFAULT_SEED, KmerMixHasher, XXH3Hasher
from qfmaplet.maplet import Maplet, Mode, build_counting_maplet
from qfmaplet.values import BitsetValue, CounterValue

MAX_K = 31
_BASES = "ACGT"

_LUT = np.full(256, 4, dtype=np.uint8)
for _i, _b in enumerate(_BASES):
    _LUT[ord(_b)] = _i
    _LUT[ord(_b.lower())] = _i
_CODE = {b: i for i, b in enumerate(_BASES)} | {b.lower(): i for i, b in enumerate(_BASES)}


@dataclass(frozen=True)
class KmerConfig:
    k: int
    canonical: bool = True
    exact: bool = False
    min_count_to_report: int = 1

    def __post_init__(self):
        if not 1 <= self.k <= MAX_K:
            raise ValueError(f"k must be in 1..{MAX_K}, got {self.k}")
        if self.min_count_to_report < 1:
            raise ValueError("min_count_to_report must be >= 1")

    @property
    def word_bits(self) -> int:
        return 2 * self.k


@dataclass(frozen=True)
class SequenceRecord:
    id: str
    sequence: str


# -- parsing --------------------------------------------------------------------


def _open_binary(source) -> tuple[IO[bytes], str, bool]:
    if isinstance(source, (str, os.PathLike)):
        return open(source, "rb"), os.fspath(source), True
    if isinstance(source, (bytes, bytearray)):
        return io.BytesIO(bytes(source)), "<bytes>", True
    name = getattr(source, "name", "<stream>")
    if isinstance(source, io.TextIOBase):
        return io.BytesIO(source.read().encode()), name, True
    return source, name, False


def _text_lines(source) -> tuple[Iterator[str], str, IO]:
    raw, name, owned = _open_binary(source)
    buffered = raw if hasattr(raw, "peek") else io.BufferedReader(raw)
    magic = buffered.peek(2)[:2]
    stream = gzip.GzipFile(fileobj=buffered) if magic == b"\x1f\x8b" else buffered
    text = io.TextIOWrapper(stream, encoding="ascii", errors="replace", newline=None)
    return text, name, (raw if owned else None)


def parse_sequences(source) -> Iterator[SequenceRecord]:
    """Stream records from FASTA or FASTQ text, gzip-compressed or not.

    ``source`` is a path or an open file (raw bytes work too). Malformed input raises
    :class:`ParseError` carrying the 1-based line number.
    """
    lines, name, owned = _text_lines(source)
    try:
        yield from _parse_lines(lines, name)
    except (OSError, EOFError) as exc:
        raise ParseError(f"unreadable input ({exc})", source=name) from None
    finally:
        if owned is not None:
            owned.close()


def _parse_lines(lines: Iterable[str], name: str) -> Iterator[SequenceRecord]:
    it = enumerate(lines, 1)
    fmt = None
    for lineno, line in it:
        line = line.rstrip("\r\n")
        if not line.strip():
            continue
        if line[0] == ">":
            fmt = "fasta"
        elif line[0] == "@":
            fmt = "fastq"
        else:
            raise ParseError("expected '>' (FASTA) or '@' (FASTQ) header", lineno, name)
        first = (lineno, line)
        break
    if fmt is None:
        return
    if fmt == "fasta":
        yield from _parse_fasta(first, it, name)
    else:
        yield from _parse_fastq(first, it, name)


_SEQ_LINE = re.compile(r"[A-Za-z.*-]+")


def _parse_fasta(first, it, name):
    header = first[1][1:].strip()
    chunks: list[str] = []
    for lineno, line in it:
        line = line.rstrip("\r\n")
        if line.startswith(">"):
            yield SequenceRecord(header, "".join(chunks))
            header, chunks = line[1:].strip(), []
        elif line.startswith(("@", "+")) and not chunks:
            raise ParseError("FASTQ line inside FASTA input", lineno, name)
        elif line.strip():
            line = line.strip()
            if not _SEQ_LINE.fullmatch(line):
                raise ParseError("unexpected character in sequence line", lineno, name)
            chunks.append(line)
    yield SequenceRecord(header, "".join(chunks))


def _parse_fastq(first, it, name):
    lineno, header = first
    while True:
        try:
            seq_no, seq = next(it)
            plus_no, plus = next(it)
            qual_no, qual = next(it)
        except StopIteration:
            raise ParseError("truncated FASTQ record", lineno, name) from None
        seq, plus, qual = (x.rstrip("\r\n") for x in (seq, plus, qual))
        if not _SEQ_LINE.fullmatch(seq.strip() or "-"):
            raise ParseError("unexpected character in sequence line", seq_no, name)
        if not plus.startswith("+"):
            raise ParseError("expected '+' separator line", plus_no, name)
        if len(qual) != len(seq):
            raise ParseError(f"quality length {len(qual)} != sequence length {len(seq)}",
                             qual_no, name)
        yield SequenceRecord(header[1:].strip(), seq.strip())
        for lineno, header in it:
            header = header.rstrip("\r\n")
            if header.strip():
                break
        else:
            return
        if not header.startswith("@"):
            raise ParseError("expected '@' record header", lineno, name)


# -- k-mer words ----------------------------------------------------------------


def encode_kmer(text: str) -> int:
    word = 0
    for ch in text:
        try:
            word = (word << 2) | _CODE[ch]
        except KeyError:
            raise ValueError(f"non-ACGT base {ch!r} in k-mer") from None
    return word


def decode_kmer(word: int, k: int) -> str:
    return "".join(_BASES[(word >> (2 * (k - 1 - i))) & 3] for i in range(k))


def reverse_complement(word: int, k: int) -> int:
    out = 0
    for _ in range(k):
        out = (out << 2) | (3 - (word & 3))
        word >>= 2
    return out


def canonical(word: int, k: int) -> int:
    return min(word, reverse_complement(word, k))


def canonical_kmers(record: SequenceRecord | str, config: KmerConfig) -> Iterator[int]:
    """Rolling 2-bit encoder: one O(1) update per base.

    Any non-ACGT base resets the window, so k-mers spanning it are skipped.
    """
    seq = record.sequence if isinstance(record, SequenceRecord) else record
    k = config.k
    mask = (1 << (2 * k)) - 1
    top = 2 * (k - 1)
    fw = rc = filled = 0
    canon = config.canonical
    code = _CODE
    for ch in seq:
        c = code.get(ch)
        if c is None:
            fw = rc = filled = 0
            continue
        fw = ((fw << 2) | c) & mask
        rc = (rc >> 2) | ((3 - c) << top)
        filled += 1
        if filled >= k:
            yield (fw if fw < rc else rc) if canon else fw


def kmer_words(sequence: str, config: KmerConfig) -> np.ndarray:
    """All k-mer words of one sequence as a uint64 array (vectorised)."""
    k = config.k
    codes = _LUT[np.frombuffer(sequence.encode("ascii", "replace"), dtype=np.uint8)]
    n = len(codes) - k + 1
    if n <= 0:
        return np.empty(0, dtype=np.uint64)
    bad = np.concatenate([[0], np.cumsum(codes == 4)])
    ok = (bad[k:] - bad[:-k]) == 0
    c = codes.astype(np.uint64)
    fw = np.zeros(n, dtype=np.uint64)
    rc = np.zeros(n, dtype=np.uint64)
    three = np.uint64(3)
    for j in range(k):
        window = c[j : j + n]
        fw = (fw << np.uint64(2)) | window
        rc |= (three - np.minimum(window, three)) << np.uint64(2 * j)
    if config.canonical:
        fw = np.minimum(fw, rc)
    return fw[ok]


def collect_kmers(sources, config: KmerConfig) -> np.ndarray:
    if isinstance(sources, (str, bytes, os.PathLike)) or hasattr(sources, "read"):
        sources = [sources]
    parts = [kmer_words(rec.sequence, config)
             for src in sources for rec in parse_sequences(src)]
    if not parts:
        return np.empty(0, dtype=np.uint64)
    return np.concatenate(parts)


# -- counting -----------------------------------------------------------------------


def exact_params(config: KmerConfig, distinct: int, value_bits: int,
                 seed: int = 0, alpha: float = 0.95) -> FilterParams:
    """Parameters for an exact map: fingerprints are the full 2k-bit k-mer.

    Tables need at least 64 slots and one remainder bit, so tiny k (or a
    table nearly saturated with distinct k-mers) widens p beyond 2k. The mix
    is a bijection on any width of at least 2k bits, so exactness holds.
    """
    base = FilterParams(6, 1, value_bits, alpha)
    q = quotient_bits_for(max(distinct, 1), base, 6)
    p = max(config.word_bits, q + 1)
    return FilterParams(q, p - q, value_bits, alpha, hash_seed=seed,
                        hash_id=KmerMixHasher.hash_id)


def kmer_fingerprints(words: np.ndarray, params: FilterParams) -> np.ndarray:
    return params.hasher().fingerprints_int(words, params.fingerprint_bits)


def count_kmers(sources, config: KmerConfig, *, epsilon: float = 2**-9,
                capacity: int | None = None, value_bits: int = 16, threads: int = 1,
                seed: int = DEFAULT_SEED) -> Maplet:
    """Count canonical k-mers into a saturating counter maplet.

    ``threads > 1`` shards the fingerprint space and fills the shards
    concurrently; the resulting maplet is identical for any thread count.
    """
    words = collect_kmers(sources, config)
    distinct = len(np.unique(words))
    if config.exact:
        params = exact_params(config, max(distinct, capacity or 0), value_bits, seed)
    else:
        params = FilterParams.for_capacity(max(capacity or distinct, 1), epsilon, value_bits,
                                           hash_seed=seed, hash_id=XXH3Hasher.hash_id)
    template = Maplet(value_type=CounterValue(value_bits), params=params)
    fps = kmer_fingerprints(words, params)
    return build_counting_maplet(template, fps, shards=max(1, threads), threads=threads)


def query_kmer(m: Maplet, kmer: str | int, config: KmerConfig):
    word = encode_kmer(kmer) if isinstance(kmer, str) else int(kmer)
    if config.canonical:
        word = canonical(word, config.k)
    fp = m.hasher.fingerprint_int(word, m.params.fingerprint_bits)
    return m.query_fingerprint(fp)


def histogram(m: Maplet) -> dict[int, int]:
    """count value -> number of distinct stored fingerprints with that count."""
    _, vals = m.enumerate_arrays()
    if len(vals) == 0:
        return {}
    values, counts = np.unique(vals, return_counts=True)
    return {int(v): int(c) for v, c in zip(values, counts)}


def dump_counts(m: Maplet, config: KmerConfig, sources=None,
                min_count: int | None = None) -> Iterator[tuple[str, int]]:
    """(k-mer text, count) pairs sorted by k-mer.

    Exact maplets are inverted back to k-mers directly. Approximate maplets
    store no keys, so the input is re-scanned and each distinct k-mer is
    looked up.
    """
    min_count = config.min_count_to_report if min_count is None else min_count
    p = m.params.fingerprint_bits
    if m.params.hash_id == KmerMixHasher.hash_id:
        hasher = m.hasher
        fps, vals = m.enumerate_arrays()
        words = [hasher.invert(int(f), p) for f in fps]
        pairs = sorted(zip(words, vals.tolist()))
    else:
        if sources is None:
            raise ValueError("approximate maplets need the input sequences to dump k-mers")
        words = np.unique(collect_kmers(sources, config))
        counts, vals = m.lookup_batch(kmer_fingerprints(words, m.params))
        # merged mode: one payload per present fingerprint
        present = counts > 0
        pairs = zip(words[present].tolist(), vals.tolist())
    for w, c in pairs:
        if c >= min_count:
            yield decode_kmer(w, config.k), int(c)


# -- colored index ----------------------------------------------------------------


@dataclass
class ColorIndex:
    maplet: Maplet
    names: list[str]
    config: KmerConfig
    ids: dict[str, int] = field(init=False)

    def __post_init__(self):
        self.ids = {n: i for i, n in enumerate(self.names)}

    def query_word(self, word: int) -> frozenset:
        if self.config.canonical:
            word = canonical(word, self.config.k)
        fp = self.maplet.hasher.fingerprint_int(word, self.maplet.params.fingerprint_bits)
        v = self.maplet.query_fingerprint(fp)
        return frozenset() if v is None else v

    def query(self, kmer: str) -> frozenset:
        return self.query_word(encode_kmer(kmer))


def build_color_index(files, config: KmerConfig, *, width: int | None = None,
                      names: list[str] | None = None, seed: int = 0) -> ColorIndex:
    """Exact inverted index: k-mer -> set of ids of the files containing it."""
    files = list(files)
    w = width if width is not None else max(1, len(files))
    if len(files) > w or w > 64:
        raise TooManyExperiments(f"{len(files)} experiments exceed a {min(w, 64)}-bit color set")
    if names is None:
        names = [os.path.basename(os.fspath(f)) if isinstance(f, (str, os.PathLike))
                 else f"experiment_{i}" for i, f in enumerate(files)]
    words, bits = [], []
    for i, src in enumerate(files):
        u = np.unique(collect_kmers(src, config))
        words.append(u)
        bits.append(np.full(len(u), 1 << i, dtype=np.uint64))
    all_words = np.concatenate(words) if words else np.empty(0, dtype=np.uint64)
    all_bits = np.concatenate(bits) if bits else np.empty(0, dtype=np.uint64)
    order = np.argsort(all_words, kind="stable")
    all_words, all_bits = all_words[order], all_bits[order]
    uniq, starts = np.unique(all_words, return_index=True)
    colors = (np.bitwise_or.reduceat(all_bits, starts) if len(uniq)
              else np.empty(0, dtype=np.uint64))
    params = exact_params(config, len(uniq), w, seed)
    m = Maplet(value_type=BitsetValue(w), mode=Mode.MERGED, params=params)
    fps = kmer_fingerprints(uniq, params)
    ins = m.core.kernel.insert
    for f, c in zip(fps.tolist(), colors.tolist()):
        ins(f, c)
    return ColorIndex(m, list(names), config)


def experiment_hits(index: ColorIndex, transcript: str) -> tuple[list[int], int]:
    """Per-experiment hit counts over the distinct query k-mers, and their number."""
    words = np.unique(kmer_words(transcript, index.config))
    hits = [0] * len(index.names)
    if len(words) == 0:
        return hits, 0
    m = index.maplet
    counts, vals = m.lookup_batch(kmer_fingerprints(words, m.params))
    for v in vals.tolist():
        while v:
            low = v & -v
            hits[low.bit_length() - 1] += 1
            v ^= low
    return hits, len(words)


def query_experiments(index: ColorIndex, transcript: str, theta: float) -> list[int]:
    """Ids of experiments holding at least ``theta`` of the transcript's k-mers."""
    if not 0.0 < theta <= 1.0:
        raise ValueError("theta must be in (0, 1]")
    hits, n = experiment_hits(index, transcript)
    if n == 0:
        return []
    need = theta * n
    return [i for i, h in enumerate(hits) if h >= need - 1e-9 * n]


def color_query_rows(index: ColorIndex, transcript: str, theta: float):
    """(name, hits, fraction) rows for experiments passing the threshold."""
    hits, n = experiment_hits(index, transcript)
    for i in query_experiments(index, transcript, theta):
        yield index.names[i], hits[i], hits[i] / n


def save_color_index(index: ColorIndex, path) -> None:
    with open(path, "wb") as f:
        f.write(index.maplet.to_bytes())
    with open(f"{os.fspath(path)}.names", "w") as f:
        f.write(f"#k={index.config.k}\tcanonical={int(index.config.canonical)}\n")
        for n in index.names:
            f.write(n + "\n")


def load_color_index(path) -> ColorIndex:
    with open(path, "rb") as f:
        m = Maplet.from_bytes(f.read())
    with open(f"{os.fspath(path)}.names") as f:
        meta = f.readline().lstrip("#").split()
        opts = dict(kv.split("=") for kv in meta)
        names = [line.rstrip("\n") for line in f]
    config = KmerConfig(int(opts["k"]), canonical=bool(int(opts["canonical"])), exact=True)
    return ColorIndex(m, names, config)

