import numpy as np
import pytest

from awafs.metrics import (FlowClass, MetricsLedger, NoSamples, aggregate, ci95, classify, emit,
                           read_flows_csv, summarize, write_aggregate)

FLOWS_CSV = """\
flow_id,src,dst,size,class,start,fct,timeouts
0,0,1,5000,small,0.000000000,0.001000000,0
1,2,3,200000,medium,0.000500000,0.003500000,1
2,1,0,20000000,large,0.001000000,,0
"""

SUMMARY_CSV = """\
scenario,load,scheduler,class,metric,value
demo,0.5,static,small,mean_fct,0.001000000
demo,0.5,static,small,p99_fct,0.001000000
demo,0.5,static,small,count,1
demo,0.5,static,small,unfinished,0
demo,0.5,static,small,timeouts,0
demo,0.5,static,medium,mean_fct,0.003500000
demo,0.5,static,medium,p99_fct,0.003500000
demo,0.5,static,medium,count,1
demo,0.5,static,medium,unfinished,0
demo,0.5,static,medium,timeouts,1
demo,0.5,static,large,count,0
demo,0.5,static,large,unfinished,1
demo,0.5,static,large,timeouts,0
demo,0.5,static,all,mean_fct,0.002250000
demo,0.5,static,all,p99_fct,0.003500000
demo,0.5,static,all,count,2
demo,0.5,static,all,unfinished,1
demo,0.5,static,all,timeouts,1
"""

TRAJ_CSV = """\
time,switch,port,thr_index,bytes
0.250000000,leaf0,3,1,1460
0.250000000,leaf0,3,2,7000
"""


def three_flow_ledger():
    a = lambda *v: np.array(v, dtype=np.int64)
    return MetricsLedger(a(0, 1, 2), a(0, 2, 1), a(1, 3, 0), a(5000, 200_000, 20_000_000),
                         a(0, 500_000, 1_000_000), a(1_000_000, 3_500_000, -1), a(0, 1, 0),
                         traj=[(250_000_000, "leaf0", 3, [1460, 7000])])


def test_classify_boundaries():
    assert classify(1) is FlowClass.SMALL
    assert classify(100_000) is FlowClass.SMALL
    assert classify(100_001) is FlowClass.MEDIUM
    assert classify(10_000_000) is FlowClass.MEDIUM
    assert classify(10_000_001) is FlowClass.LARGE


def test_summarize_examples():
    s = summarize([5e-3])
    assert (s.mean, s.tail, s.count) == (5e-3, 5e-3, 1)
    s = summarize(np.arange(1, 101) * 1e-3)
    assert s.mean == pytest.approx(50.5e-3)
    assert s.tail == pytest.approx(99e-3)
    s = summarize([7.0] * 9)
    assert s.mean == s.tail == 7.0
    with pytest.raises(NoSamples):
        summarize([])


def test_ci95_examples():
    assert ci95([3.0, 3.0, 3.0]) == (3.0, 0.0)
    mean, half = ci95([10, 14])
    assert mean == 12 and half == pytest.approx(3.92, abs=1e-9)
    mean, half = ci95(list(range(30)))
    assert mean == 14.5 and half > 0
    assert ci95([1.0]) is None
    assert ci95([10, 14], method="t")[1] > half


def test_emit_matches_fixture(tmp_path):
    paths = emit(three_flow_ledger(), tmp_path, "demo", 0.5, "static")
    assert paths["flows"].read_text() == FLOWS_CSV
    assert paths["summary"].read_text() == SUMMARY_CSV
    assert paths["trajectory"].read_text() == TRAJ_CSV


def test_empty_ledger_writes_headers_only(tmp_path):
    paths = emit(MetricsLedger.empty(), tmp_path)
    assert [p.read_text().count("\n") for p in paths.values()] == [1, 1, 1]


def test_recompute_from_csv(tmp_path):
    led = three_flow_ledger()
    paths = emit(led, tmp_path, "demo", 0.5, "static")
    back = read_flows_csv(paths["flows"])
    assert back.aggregates() == led.aggregates()


def test_all_mean_is_class_weighted_mean():
    rng = np.random.default_rng(0)
    n = 400
    sizes = rng.choice([5_000, 500_000, 50_000_000], size=n)
    fct = rng.integers(1_000, 10**8, size=n)
    z = np.zeros(n, dtype=np.int64)
    agg = MetricsLedger(np.arange(n), z, z + 1, sizes, z, fct, z).aggregates()
    weighted = sum(agg[c]["mean_fct"] * agg[c]["count"] for c in ("small", "medium", "large"))
    assert agg["all"]["mean_fct"] == pytest.approx(weighted / agg["all"]["count"], rel=1e-12)


def test_warmup_excludes_early_flows():
    led = three_flow_ledger()
    led.warmup_ns = 400_000
    assert led.aggregates()["small"]["count"] == 0
    assert led.aggregates()["medium"]["count"] == 1


def test_aggregate_rows(tmp_path):
    a, b = three_flow_ledger(), three_flow_ledger()
    b.fct_ns = b.fct_ns * 2
    rows = aggregate([a, b], "demo", 0.5, "static")
    small = {r[4]: r for r in rows if r[3] == "small"}
    assert small["mean_fct"][5] == "0.001500000"
    assert float(small["mean_fct"][6]) == pytest.approx(1.96 * np.std([1e-3, 2e-3], ddof=1) / np.sqrt(2))
    assert small["mean_fct"][7] == "2"
    text = write_aggregate(rows, tmp_path / "summary.csv").read_text()
    assert text.startswith("scenario,load,scheduler,class,metric,value,ci95_half,runs\n")


def test_unwritable_destination(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="cannot write"):
        emit(three_flow_ledger(), blocker / "sub")
