import os
import subprocess
import sys
from collections import defaultdict

import pytest

from qfmaplet import BitsetValue, CounterValue, Maplet, Mode
from qfmaplet.bench import bench_fpr, bench_strong, wilson_interval
from qfmaplet.cli import main

from oracles import naive_kmers, random_genome


def run(argv, capsys):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    out, err = capsys.readouterr()
    return code, out, err


def tsv(text):
    lines = text.splitlines()
    return lines[0].split("\t"), [ln.split("\t") for ln in lines[1:]]


@pytest.fixture
def genome_files(tmp_path, rng):
    seqs = [random_genome(rng, 3000) for _ in range(3)]
    paths = []
    for i, s in enumerate(seqs):
        p = tmp_path / f"exp{i}.fa"
        p.write_text(f">e{i}\n{s}\n")
        paths.append(str(p))
    return seqs, paths


def write_maplet(path, m):
    with open(path, "wb") as f:
        f.write(m.to_bytes())
    return str(path)


# -- kmer-count ------------------------------------------------------------------------


def test_kmer_count_exact(genome_files, tmp_path, capsys):
    seqs, paths = genome_files
    hist = tmp_path / "h.tsv"
    mpath = tmp_path / "c.mplt"
    code, out, _ = run(["kmer-count", "--k", "11", "--exact", "--threads", "4",
                        "--histogram", str(hist), "--maplet", str(mpath), *paths], capsys)
    assert code == 0
    head, rows = tsv(out)
    assert head == ["kmer", "count"]
    truth = defaultdict(int)
    for s in seqs:
        for k in naive_kmers(s, 11):
            truth[k] += 1
    assert {k: int(c) for k, c in rows} == truth
    assert [r[0] for r in rows] == sorted(truth)
    assert hist.read_text().startswith("count\tkmers\n")
    assert Maplet.from_bytes(mpath.read_bytes()).value_type == CounterValue(16)


def test_kmer_count_approximate_deterministic(genome_files, tmp_path, capsys):
    _, paths = genome_files
    outs = []
    for threads in ("1", "3"):
        o = tmp_path / f"out{threads}.tsv"
        code, _, _ = run(["kmer-count", "--k", "15", "--epsilon", "2^-12", "--seed", "5",
                          "--threads", threads, "-o", str(o), *paths], capsys)
        assert code == 0
        outs.append(o.read_bytes())
    assert outs[0] == outs[1]


def test_kmer_count_pretty_and_min_count(tmp_path, capsys):
    p = tmp_path / "a.fa"
    p.write_text(">a\nAAAAC\n")
    code, out, _ = run(["kmer-count", "--k", "3", "--exact", "--min-count", "2",
                        "--pretty", str(p)], capsys)
    assert code == 0
    assert out.splitlines()[0].split() == ["kmer", "count"]
    assert out.splitlines()[2].split() == ["AAA", "2"]


# -- color index / query -------------------------------------------------------------------


def test_color_index_and_query(genome_files, tmp_path, capsys):
    seqs, paths = genome_files
    idx = tmp_path / "colors.mplt"
    code, out, _ = run(["color-index", "--k", "15", "--names", "a,b,c", "-o", str(idx),
                        *paths], capsys)
    assert code == 0 and "experiments\t3" in out
    q = tmp_path / "q.fa"
    q.write_text(f">t1\n{seqs[1][100:400]}\n>t2\n{seqs[2][:200]}{seqs[0][:200]}\n")
    code, out, _ = run(["color-query", "--index", str(idx), "--theta", "0.4", str(q)], capsys)
    assert code == 0
    lines = out.splitlines()
    assert lines[0] == "experiment_name\thits\tfraction"
    assert lines[1] == "#query=t1"
    assert lines[2].startswith("b\t286\t1.0")
    assert lines[3] == "#query=t2"
    assert {ln.split("\t")[0] for ln in lines[4:]} == {"a", "c"}


def test_color_usage_errors(genome_files, tmp_path, capsys):
    _, paths = genome_files
    assert run(["color-index", "--k", "5", *paths], capsys)[0] == 2
    assert run(["color-index", "--k", "5", "--names", "x", "-o", str(tmp_path / "i"),
                *paths], capsys)[0] == 2
    code, _, err = run(["color-index", "--k", "5", "--value-bits", "2", "-o",
                        str(tmp_path / "i"), *paths], capsys)
    assert code == 4 and "TooManyExperiments" in err


# -- benches -----------------------------------------------------------------------------------


def test_bench_fpr_cli_and_determinism(capsys):
    argv = ["bench-fpr", "--n", "20000", "--epsilon", "2^-8", "--probes", "200000"]
    code, out1, _ = run(argv, capsys)
    assert code == 0
    _, out2, _ = run(argv, capsys)
    assert out1 == out2
    rows = dict(r for r in tsv(out1)[1])
    assert rows["passed"] == "true"
    assert float(rows["ci_low"]) <= float(rows["measured"]) <= float(rows["ci_high"])


def test_bench_fpr_n_zero():
    rep = bench_fpr(0, 2**-10, 100_000)
    assert rep.measured == 0.0 and rep.passed


def test_bench_fpr_failure_exit_code(capsys, monkeypatch):
    import qfmaplet.bench as bench

    rep = bench_fpr(5000, 2**-4, 100_000, slack=0.1)
    assert not rep.passed
    monkeypatch.setattr(bench, "bench_fpr", lambda *a, **k: rep)
    code, out, _ = run(["bench-fpr"], capsys)
    assert code == 5 and "passed\tfalse" in out


def test_wilson_interval():
    lo, hi = wilson_interval(0, 1000)
    assert lo == 0.0 and 0 < hi < 0.01
    lo, hi = wilson_interval(500, 1000)
    assert lo < 0.5 < hi
    assert wilson_interval(0, 0) == (0.0, 1.0)


def test_bench_strong_properties(capsys):
    rep = bench_strong(20_000, 2**-5, 1_000_000)
    assert sum(rep.histogram.values()) == 1_000_000
    assert rep.passed
    assert rep.tail[2] <= 2 * rep.epsilon * rep.tail[1]
    one = bench_strong(1, 2**-5, 100_000)
    assert max(one.histogram) <= 1 and one.tail[2] == 0.0
    code, out, _ = run(["bench-strong", "--n", "5000", "--probes", "100000"], capsys)
    assert code == 0 and out.startswith("field\tvalue\nl=0\t")


# -- simulators ----------------------------------------------------------------------------------


def test_lsm_sim_cli(tmp_path, capsys):
    cfg = tmp_path / "lsm.conf"
    cfg.write_text("g = 4\nh = 2\nkeys_per_sstable = 128\n")
    code, out, _ = run(["lsm-sim", "--config", str(cfg), "--policy", "leveled",
                        "--queries", "5000"], capsys)
    assert code == 0
    rows = dict(tsv(out)[1])
    assert rows["write_amp"] == "8" and rows["read_mult"] == "2"
    assert rows["missed"] == "0"
    cfg.write_text("nonsense = 1\n")
    assert run(["lsm-sim", "--config", str(cfg)], capsys)[0] == 2
    assert run(["lsm-sim", "--g", "1"], capsys)[0] == 2


def test_cache_sim_cli(capsys):
    code, out, _ = run(["cache-sim", "--peers", "4", "--cache-size", "300", "--universe",
                        "20000", "--rounds", "10", "--churn", "5", "--lookups", "200"], capsys)
    assert code == 0
    rows = dict(tsv(out)[1])
    assert rows["consistency_violations"] == "0"
    assert rows["maplet_probes_per_lookup"] == "1.0"
    assert rows["filter_probes_per_lookup"] == "4.0"


# -- dump / merge ----------------------------------------------------------------------------------


def test_dump_empty_is_header_only(tmp_path, capsys):
    p = write_maplet(tmp_path / "e.mplt", Maplet(100, 2**-8))
    code, out, _ = run(["maplet-dump", p], capsys)
    assert code == 0 and out == "fingerprint\tvalue\n"


def test_merge_with_empty_dump_identity(tmp_path, capsys, rng):
    x = Maplet(1000, 2**-10)
    for k in rng.integers(0, 1 << 60, size=300).tolist():
        x.insert(k, 3)
    px = write_maplet(tmp_path / "x.mplt", x)
    pe = write_maplet(tmp_path / "e.mplt", Maplet(1000, 2**-10))
    out_path = tmp_path / "m.mplt"
    assert run(["maplet-merge", px, pe, "-o", str(out_path)], capsys)[0] == 0
    _, d1, _ = run(["maplet-dump", str(out_path)], capsys)
    _, d2, _ = run(["maplet-dump", px], capsys)
    assert d1 == d2 and len(d1.splitlines()) == 301


@pytest.mark.parametrize("vt,mode", [(CounterValue(16), Mode.MERGED),
                                     (BitsetValue(8), Mode.MERGED),
                                     (BitsetValue(8), Mode.MULTISET)])
def test_dump_of_merge_matches_text_oracle(tmp_path, capsys, rng, vt, mode):
    keys = rng.integers(0, 1 << 60, size=400).tolist()
    ms = []
    for part in (keys[:250], keys[150:]):
        m = Maplet(1000, 2**-10, vt, mode)
        for k in part:
            m.insert(k, int(k) % 7 + 1 if vt.name == "counter" else {int(k) % 8})
        ms.append(write_maplet(tmp_path / f"{len(ms)}.mplt", m))
    out_path = tmp_path / "m.mplt"
    assert run(["maplet-merge", *ms, "-o", str(out_path)], capsys)[0] == 0
    dumps = [tsv(run(["maplet-dump", p], capsys)[1])[1] for p in ms]
    _, merged, _ = run(["maplet-dump", str(out_path)], capsys)

    if mode is Mode.MULTISET:
        want = sorted(tuple(r) for d in dumps for r in d)
    else:
        acc = {}
        for d in dumps:
            for f, v in d:
                if f not in acc:
                    acc[f] = v
                elif vt.name == "counter":
                    acc[f] = str(int(acc[f]) + int(v))
                else:
                    acc[f] = ",".join(str(i) for i in sorted(
                        {int(i) for i in acc[f].split(",")} | {int(i) for i in v.split(",")}))
        want = sorted(acc.items())
    assert [tuple(r) for r in tsv(merged)[1]] == want


def test_merge_incompatible_exit_code(tmp_path, capsys):
    a = write_maplet(tmp_path / "a.mplt", Maplet(100, 2**-8))
    b = write_maplet(tmp_path / "b.mplt", Maplet(100, 2**-8, seed=3))
    assert run(["maplet-merge", a, b, "-o", str(tmp_path / "m")], capsys)[0] == 4
    assert run(["maplet-merge", a, b], capsys)[0] == 2


# -- exit codes ------------------------------------------------------------------------------------


def test_exit_codes(tmp_path, capsys):
    assert run([], capsys)[0] == 2
    assert run(["bench-fpr", "--epsilon", "2"], capsys)[0] == 2
    assert run(["bench-fpr", "--threads", "2"], capsys)[0] == 2
    assert run(["lsm-sim", "--exact"], capsys)[0] == 2
    assert run(["kmer-count", "--exact", "--epsilon", "2^-8", "x.fa"], capsys)[0] == 2
    assert run(["kmer-count", "--k", "40", "x.fa"], capsys)[0] == 2
    assert run(["maplet-dump", str(tmp_path / "missing")], capsys)[0] == 3
    bad = tmp_path / "bad.mplt"
    bad.write_bytes(b"not a maplet at all, definitely not" * 2)
    assert run(["maplet-dump", str(bad)], capsys)[0] == 4
    fa = tmp_path / "bad.fa"
    fa.write_text("ACGT\n")
    code, _, err = run(["kmer-count", "--k", "3", str(fa)], capsys)
    assert code == 4 and ":1:" in err


def test_console_script_and_pure_python_fallback(tmp_path):
    env = dict(os.environ, QFMAPLET_PURE_PYTHON="1")
    res = subprocess.run([sys.executable, "-m", "qfmaplet.cli", "bench-fpr", "--n", "2000",
                          "--probes", "100000"], env=env, capture_output=True, text=True)
    assert res.returncode == 0, res.stderr
    code = ("import qfmaplet; print(qfmaplet.BACKEND)")
    res = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True)
    assert res.stdout.strip() == "python"
