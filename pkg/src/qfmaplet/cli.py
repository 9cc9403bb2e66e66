"""Command-line entry point: ``qfmaplet <subcommand> ...``.

Exit codes: 0 success, 2 usage, 3 I/O, 4 malformed or incompatible input,
5 a statistical or consistency check failed.
"""

from __future__ import annotations

import argparse
import contextlib
import math
import sys
from typing import Iterable

from qfmaplet import __version__
from qfmaplet.errors import FormatError, IncompatibleParams, ParseError, TooManyExperiments
from qfmaplet.hashing import DEFAULT_SEED
from qfmaplet.maplet import Maplet, merge

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_IO = 3
EXIT_FORMAT = 4
EXIT_ASSERT = 5


class UsageError(Exception):
    pass


def parse_number(text: str) -> float:
    """Floats, plus ``2^-10`` / ``2**-10`` shorthand."""
    t = text.strip()
    for prefix in ("2^", "2**"):
        if t.startswith(prefix):
            return 2.0 ** float(t[len(prefix):])
    return float(t)


def _epsilon(text: str) -> float:
    try:
        v = parse_number(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None
    if not 0.0 < v < 1.0:
        raise argparse.ArgumentTypeError("epsilon must be in (0, 1)")
    return v


def _positive(text: str) -> int:
    try:
        v = int(float(text)) if "e" in text.lower() else int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _count(text: str) -> int:
    try:
        v = int(float(text)) if "e" in text.lower() else int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not an integer: {text!r}") from None
    if v < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return v


def _fraction(text: str) -> float:
    v = float(text)
    if not 0.0 <= v <= 1.0:
        raise argparse.ArgumentTypeError("must be in [0, 1]")
    return v


# -- output -------------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if v is None:
        return "NA"
    return repr(v) if isinstance(v, float) else str(v)


def render(rows: Iterable[Iterable], header: Iterable[str] | None, pretty: bool) -> str:
    rows = [[_fmt(c) for c in r] for r in rows]
    head = list(header) if header else None
    if not pretty:
        lines = (["\t".join(head)] if head else []) + ["\t".join(r) for r in rows]
        return "".join(line + "\n" for line in lines)
    table = ([head] if head else []) + rows
    if not table:
        return ""
    widths = [max(len(r[i]) for r in table if i < len(r)) for i in range(max(map(len, table)))]
    out = []
    for n, r in enumerate(table):
        out.append("  ".join(c.ljust(widths[i]) for i, c in enumerate(r)).rstrip())
        if head and n == 0:
            out.append("  ".join("-" * w for w in widths))
    return "\n".join(out) + "\n"


@contextlib.contextmanager
def _sink(path):
    if path in (None, "-"):
        yield sys.stdout
        return
    with open(path, "w") as f:
        yield f


def _emit(args, rows, header):
    with _sink(args.output) as out:
        out.write(render(rows, header, args.pretty))


# -- subcommands ----------------------------------------------------------------------


def _kmer_config(args, exact: bool):
    from qfmaplet.kmer import KmerConfig

    try:
        return KmerConfig(args.k, canonical=not args.no_canonical, exact=exact,
                          min_count_to_report=args.min_count)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_kmer_count(args):
    from qfmaplet.kmer import count_kmers, dump_counts, histogram

    if args.exact and args.epsilon is not None:
        raise UsageError("--exact and --epsilon are mutually exclusive")
    cfg = _kmer_config(args, args.exact)
    m = count_kmers(args.inputs, cfg, epsilon=args.epsilon or 2**-9, capacity=args.capacity,
                    value_bits=args.value_bits or 16, threads=args.threads, seed=args.seed)
    if args.maplet:
        with open(args.maplet, "wb") as f:
            f.write(m.to_bytes())
    if args.histogram:
        rows = sorted(histogram(m).items())
        with open(args.histogram, "w") as f:
            f.write(render(rows, ("count", "kmers"), False))
    _emit(args, dump_counts(m, cfg, sources=args.inputs), ("kmer", "count"))


def cmd_color_index(args):
    from qfmaplet.kmer import build_color_index, save_color_index

    if not args.output or args.output == "-":
        raise UsageError("color-index needs --output for the index file")
    cfg = _kmer_config(args, True)
    names = args.names.split(",") if args.names else None
    if names is not None and len(names) != len(args.inputs):
        raise UsageError("--names must list one name per input file")
    idx = build_color_index(args.inputs, cfg, width=args.value_bits, names=names,
                            seed=args.seed)
    save_color_index(idx, args.output)
    rows = [("experiments", len(idx.names)), ("kmers", len(idx.maplet)),
            ("bits", idx.maplet.core.space_bits())]
    sys.stdout.write(render(rows, ("field", "value"), args.pretty))


def cmd_color_query(args):
    from qfmaplet.kmer import color_query_rows, load_color_index, parse_sequences

    if not 0.0 < args.theta <= 1.0:
        raise UsageError("--theta must be in (0, 1]")
    idx = load_color_index(args.index)
    records = list(parse_sequences(args.query))
    rows = []
    for rec in records:
        if len(records) > 1:
            rows.append((f"#query={rec.id}",))
        rows.extend(color_query_rows(idx, rec.sequence, args.theta))
    _emit(args, rows, ("experiment_name", "hits", "fraction"))


def cmd_bench_fpr(args):
    from qfmaplet.bench import bench_fpr

    if args.probes < 1:
        raise UsageError("--probes must be >= 1")
    rep = bench_fpr(args.n, args.epsilon or 2**-10, args.probes, seed=args.seed)
    _emit(args, rep.rows(), ("field", "value"))
    return EXIT_OK if rep.passed else EXIT_ASSERT


def cmd_bench_strong(args):
    from qfmaplet.bench import bench_strong

    rep = bench_strong(args.n, args.epsilon or 2**-5, args.probes, seed=args.seed)
    _emit(args, rep.rows(), ("field", "value"))
    return EXIT_OK if rep.passed else EXIT_ASSERT


def cmd_lsm_sim(args):
    from qfmaplet.lsm import LsmConfig, build_index, parse_config_text, run_queries

    settings = {}
    if args.config:
        with open(args.config) as f:
            try:
                settings = parse_config_text(f.read())
            except ValueError as exc:
                raise UsageError(f"{args.config}: {exc}") from None
    for name in ("g", "h", "keys_per_sstable", "policy", "present_fraction", "distribution",
                 "zipf_s", "eps_f", "eps_m", "probe_cost", "read_cost"):
        v = getattr(args, name)
        if v is not None:
            settings[name] = v
    if args.paged:
        settings["paged"] = True
    settings["seed"] = args.seed
    try:
        cfg = LsmConfig(**settings)
    except (TypeError, ValueError) as exc:
        raise UsageError(str(exc)) from None
    rep = run_queries(build_index(cfg), args.queries)
    _emit(args, rep.rows(), ("field", "value"))
    bound_ok = rep.max_filter_probes <= rep.read_mult and rep.max_maplet_probes <= cfg.h
    return EXIT_OK if rep.missed == 0 and bound_ok else EXIT_ASSERT


def cmd_cache_sim(args):
    from qfmaplet.cache import PeerNetwork, simulate

    try:
        net = PeerNetwork(n_peers=args.peers, cache_size=args.cache_size,
                          universe=args.universe, churn=args.churn,
                          refresh_period=args.refresh_period,
                          eps_filter=args.eps_filter or args.epsilon or 2**-8,
                          eps_maplet=args.epsilon or 2**-8, seed=args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    rep = simulate(net, args.rounds, args.lookups)
    _emit(args, rep.rows(), ("field", "value"))
    ok = rep.consistency_violations == 0 and rep.missed_holders == 0
    return EXIT_OK if ok else EXIT_ASSERT


def _read_maplet(path) -> Maplet:
    with open(path, "rb") as f:
        return Maplet.from_bytes(f.read())


def render_value(vt, payload: int) -> str:
    v = vt.decode(payload)
    if isinstance(v, frozenset):
        return ",".join(str(i) for i in sorted(v))
    if v is True:
        return "1"
    return str(v)


def dump_rows(m: Maplet):
    digits = max(1, math.ceil(m.params.fingerprint_bits / 4))
    fps, vals = m.enumerate_arrays()
    vt = m.value_type
    rows = sorted(zip(fps.tolist(), vals.tolist()))
    return [(f"{f:0{digits}x}", render_value(vt, v)) for f, v in rows]


def cmd_maplet_dump(args):
    m = _read_maplet(args.file)
    _emit(args, dump_rows(m), ("fingerprint", "value"))


def cmd_maplet_merge(args):
    if not args.output or args.output == "-":
        raise UsageError("maplet-merge needs --output for the merged file")
    maplets = [_read_maplet(p) for p in args.files]
    out = maplets[0]
    for m in maplets[1:]:
        out = merge(out, m)
    with open(args.output, "wb") as f:
        f.write(out.to_bytes())


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    g = shared.add_argument_group("shared options")
    g.add_argument("--epsilon", type=_epsilon, help="target error rate (e.g. 2^-10)")
    g.add_argument("--capacity", type=_positive, help="expected number of distinct keys")
    g.add_argument("--value-bits", type=_positive, help="value width in bits")
    g.add_argument("--threads", type=_positive, default=1, help="worker threads (kmer-count)")
    g.add_argument("--seed", type=int, default=DEFAULT_SEED, help="hash and RNG seed")
    g.add_argument("--exact", action="store_true", help="exact k-mer fingerprints (p = 2k)")
    g.add_argument("--output", "-o", help="output path (default stdout)")
    g.add_argument("--pretty", action="store_true", help="aligned table instead of TSV")

    p = argparse.ArgumentParser(prog="qfmaplet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_):
        sp = sub.add_parser(name, parents=[shared], help=help_, description=help_)
        sp.set_defaults(func=fn)
        return sp

    def kmer_opts(sp):
        sp.add_argument("--k", type=int, default=21, help="k-mer length (1..31)")
        sp.add_argument("--no-canonical", action="store_true",
                        help="count k-mers as read instead of canonical form")
        sp.add_argument("--min-count", type=_positive, default=1,
                        help="omit k-mers counted fewer times from the dump")

    sp = add("kmer-count", cmd_kmer_count, "count k-mers of FASTA/FASTQ files")
    sp.add_argument("inputs", nargs="+")
    kmer_opts(sp)
    sp.add_argument("--maplet", help="also write the counting maplet here")
    sp.add_argument("--histogram", help="write the count histogram TSV here")

    sp = add("color-index", cmd_color_index, "build an exact k-mer -> experiments index")
    sp.add_argument("inputs", nargs="+")
    kmer_opts(sp)
    sp.add_argument("--names", help="comma-separated experiment names (default: file names)")

    sp = add("color-query", cmd_color_query, "find experiments containing a transcript")
    sp.add_argument("--index", required=True)
    sp.add_argument("--theta", type=float, default=0.8, help="required k-mer fraction")
    sp.add_argument("query", help="FASTA/FASTQ file of transcripts")

    sp = add("bench-fpr", cmd_bench_fpr, "measure the false-positive rate")
    sp.add_argument("--n", type=_count, default=100_000)
    sp.add_argument("--probes", type=_positive, default=1_000_000)

    sp = add("bench-strong", cmd_bench_strong, "histogram of collision depth")
    sp.add_argument("--n", type=_count, default=100_000)
    sp.add_argument("--probes", type=_positive, default=1_000_000)

    sp = add("lsm-sim", cmd_lsm_sim, "simulate LSM query routing")
    sp.add_argument("--config", help="key = value settings file")
    sp.add_argument("--g", type=int)
    sp.add_argument("--h", type=int)
    sp.add_argument("--keys-per-sstable", type=_positive)
    sp.add_argument("--policy", choices=("leveled", "size-tiered"))
    sp.add_argument("--present-fraction", type=_fraction)
    sp.add_argument("--distribution", choices=("uniform", "zipf"))
    sp.add_argument("--zipf-s", type=float)
    sp.add_argument("--eps-f", type=_epsilon)
    sp.add_argument("--eps-m", type=_epsilon)
    sp.add_argument("--probe-cost", type=float)
    sp.add_argument("--read-cost", type=float)
    sp.add_argument("--paged", action="store_true", help="charge one read per maplet probe")
    sp.add_argument("--queries", type=_positive, default=100_000)

    sp = add("cache-sim", cmd_cache_sim, "simulate summary-cache routing with deltas")
    sp.add_argument("--peers", type=_positive, default=8)
    sp.add_argument("--cache-size", type=_positive, default=2000)
    sp.add_argument("--universe", type=_positive, default=200_000)
    sp.add_argument("--churn", type=_count, default=20)
    sp.add_argument("--refresh-period", type=_positive, default=1)
    sp.add_argument("--rounds", type=_positive, default=100)
    sp.add_argument("--lookups", type=_count, default=1000, help="lookups per refresh")
    sp.add_argument("--eps-filter", type=_epsilon, help="per-peer filter rate (default --epsilon)")

    sp = add("maplet-dump", cmd_maplet_dump, "print a maplet file as TSV")
    sp.add_argument("file")

    sp = add("maplet-merge", cmd_maplet_merge, "merge maplet files")
    sp.add_argument("files", nargs="+")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.threads > 1 and args.command != "kmer-count":
        parser.error("--threads only applies to kmer-count")
    if args.exact and args.command not in ("kmer-count", "color-index"):
        parser.error("--exact only applies to kmer-count and color-index")
    try:
        code = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"qfmaplet: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FormatError, ParseError, IncompatibleParams, TooManyExperiments) as exc:
        print(f"qfmaplet: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except OSError as exc:
        print(f"qfmaplet: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK if code is None else code


if __name__ == "__main__":
    sys.exit(main())
