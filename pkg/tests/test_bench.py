# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import csv
import json
import logging
import time

import pytest

from hireindex import HireIndex
from hireindex.bench import BenchApp, content_digest, percentiles, run_benchmark, run_ops
from hireindex.core import IndexParams, OperationError, OracleMismatchError
from hireindex.datasets import gen_synthetic
from hireindex.oracle import SortedMapOracle
from hireindex.workload import Op, OpKind, WorkloadSpec


def small_workload(**kwargs):
    kwargs.setdefault("dataset", "uniform:3k")
    kwargs.setdefault("seed", 1)
    kwargs.setdefault("match_rate", 8)
    return WorkloadSpec(**kwargs)


def test_percentiles():
    assert percentiles(range(1, 101)) == {50: 50, 75: 75, 90: 90, 99: 99, 99.9: 100}
    assert percentiles([5, 5, 5]) == dict.fromkeys((50, 75, 90, 99, 99.9), 5)
    assert percentiles([3, 1, 2], ranks=(50,)) == {50: 2}
    assert percentiles([7], ranks=(0, 100)) == {0: 7, 100: 7}
    with pytest.raises(ValueError, match="empty"):
        percentiles([])


def test_content_digest():
    assert content_digest([]) == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
    assert content_digest([(1, 2)]) == content_digest([(1, 2)])
    assert content_digest([(1, 2)]) != content_digest([(1, 3)])


class Flaky:
    def get(self, k):
        if k == 2:
            raise KeyError(k)
        return k

    def memory_bytes(self):
        return 0


def test_run_ops_wraps_failures():
    ops = [Op(OpKind.get, 1), Op(OpKind.get, 2)]
    with pytest.raises(OperationError) as info:
        run_ops(Flaky(), ops)
    assert info.value.op_index == 1
    assert isinstance(info.value.__cause__, KeyError)


def test_run_ops_reports_oracle_mismatch():
    ops = [Op(OpKind.get, 4), Op(OpKind.get, 1)]
    with pytest.raises(OracleMismatchError) as info:
        run_ops(Flaky(), ops, oracle=SortedMapOracle([(4, 4)]))
    assert info.value.op_index == 1


def test_run_ops_samples_latency_and_memory():
    ops = [Op(OpKind.get, k) for k in range(10)]
    latencies, memory = run_ops(Flaky(), [op for op in ops if op.key != 2], memory_every=3)
    assert len(latencies) == 9
    assert (latencies >= 0).all()
    assert memory == [0, 0, 0]


def test_run_benchmark_hire_against_btree(tmp_path):
    params = IndexParams(f=16, background_worker=False)
    csv_path = tmp_path / "latency.csv"
    report = run_benchmark("hire", small_workload(), params, oracle_check=True, latency_csv=csv_path)
    assert report["index"] == "hire"
    assert report["dataset_size"] == 3000
    assert report["ops"] == 2250
    assert sum(report["op_counts"].values()) == 2250
    assert report["oracle"] == {"checked": True, "mismatches": 0}
    assert report["audit"]["ok"]
    assert report["model_error_violations"] == 0
    assert set(report["latency_ns"]) == {"p50", "p75", "p90", "p99", "p99.9", "mean"}
    assert report["latency_ns"]["p50"] <= report["latency_ns"]["p99.9"]
    assert report["throughput"] > 0
    assert len(report["memory"]["samples"]) == 20
    assert report["config"]["params"]["f"] == 16
    json.dumps(report)
    with csv_path.open() as f:
        rows = list(csv.reader(f))
    assert rows[0] == ["op_index", "kind", "latency_ns"]
    assert len(rows) == 2251

    baseline = run_benchmark("btree", small_workload(), oracle_check=True, btree_fanout=16)
    assert baseline["config"]["params"] == {"fanout": 16}
    assert baseline["final_size"] == report["final_size"]
    assert baseline["content_digest"] == report["content_digest"]


def test_run_benchmark_is_deterministic():
    params = {"f": 16, "background_worker": False}
    first = run_benchmark("hire", small_workload(seed=9), IndexParams(**params))
    second = run_benchmark("hire", small_workload(seed=9), IndexParams(**params))
    assert first["content_digest"] == second["content_digest"]
    assert first["op_counts"] == second["op_counts"]


def test_run_benchmark_rejects_unknown_index():
    with pytest.raises(ValueError, match="Unknown index kind"):
        run_benchmark("skiplist", small_workload())


def test_bench_app_keeps_the_application_options():
    app = BenchApp()
    app.initialize(["--log-level=DEBUG", "--debug", "--seed=4"])
    assert app.log_level == logging.DEBUG
    assert app.config.WorkloadSpec.seed == 4
    assert {"log-level", "dataset", "f"} <= set(BenchApp.aliases)
    assert {"debug", "oracle-check"} <= set(BenchApp.flags)


@pytest.mark.parametrize("index", ["hire", "btree"])
def test_bench_app_writes_report(tmp_path, index):
    out = tmp_path / "report.json"
    app = BenchApp()
    app.initialize(
        [
            f"--index={index}",
            "--dataset=segmented:2k",
            "--seed=3",
            "-f",
            "16",
            "--ratio=2:1:1",
            "--oracle-check",
            f"--out={out}",
        ]
    )
    app.start()
    report = json.loads(out.read_text())
    assert report["index"] == index
    assert report["oracle"]["mismatches"] == 0
    assert report["config"]["workload"]["ratio"] == [2.0, 1.0, 1.0]
    assert report["config"]["workload"]["dataset"] == "segmented:2k"
    if index == "hire":
        assert report["config"]["params"]["f"] == 16


@pytest.mark.slow
@pytest.mark.parametrize("blocking", [False, True])
def test_desk_scale_run_matches_baseline(blocking):
    spec = WorkloadSpec(dataset="segmented:200k", seed=42)
    params = IndexParams(blocking_recalibration=blocking)
    report = run_benchmark("hire", spec, params, oracle_check=True)
    baseline = run_benchmark("btree", WorkloadSpec(dataset="segmented:200k", seed=42))
    assert report["audit"]["ok"]
    assert report["model_error_violations"] == 0
    assert report["content_digest"] == baseline["content_digest"]
    assert report["stats"]["engine"]["failed"] == 0


@pytest.mark.slow
def test_desk_scale_retrain_keeps_error_bound():
    spec = WorkloadSpec(dataset="lognormal:100k", workload="write-heavy", seed=7)
    report = run_benchmark("hire", spec, IndexParams(f=64), oracle_check=True)
    assert report["audit"]["ok"]
    assert report["model_error_violations"] == 0
    assert report["stats"]["engine"]["published"] > 0


@pytest.mark.slow
@pytest.mark.parametrize("seed", [1, 2, 3])
def test_oracle_equivalence_at_scale(seed):
    spec = WorkloadSpec(dataset="uniform:1M", ratio=[1.0, 1.0, 1.0], match_rate=256, seed=seed)
    report = run_benchmark("hire", spec, IndexParams(), oracle_check=True)
    assert report["ops"] == 750_000
    assert report["oracle"] == {"checked": True, "mismatches": 0}
    assert report["audit"]["ok"], report["audit"]["violations"]
    assert report["model_error_violations"] == 0
    assert report["stats"]["engine"]["failed"] == 0
    assert report["stats"]["mean_buffer_touches"] <= 3


@pytest.mark.slow
def test_bulk_load_is_linear():
    def build_seconds(n):
        keys = gen_synthetic("uniform", n, 5)
        start = time.perf_counter()
        index = HireIndex.bulk_load(((k, k) for k in keys), background_worker=False)
        elapsed = time.perf_counter() - start
        assert len(index) == n
        index.close()
        return elapsed

    assert build_seconds(4_000_000) <= 5.0 * build_seconds(1_000_000)


@pytest.mark.slow
def test_blocking_recalibration_lengthens_the_tail():
    spec = {"dataset": "segmented:1M", "seed": 11}
    background = run_benchmark("hire", WorkloadSpec(**spec), IndexParams())
    blocking = run_benchmark("hire", WorkloadSpec(**spec), IndexParams(blocking_recalibration=True))
    assert background["content_digest"] == blocking["content_digest"]
    assert blocking["latency_ns"]["p99.9"] >= 1.5 * background["latency_ns"]["p99.9"]


@pytest.mark.slow
def test_legacy_leaves_pay_for_themselves():
    spec = {"dataset": "segmented:1M", "seed": 13}
    full = run_benchmark("hire", WorkloadSpec(**spec), IndexParams())
    bare = run_benchmark("hire", WorkloadSpec(**spec), IndexParams(disable_legacy_leaves=True))
    assert bare["stats"]["legacy_leaves"] == 0
    assert bare["throughput"] <= 0.9 * full["throughput"]


@pytest.mark.slow
def test_range_queries_keep_up_with_the_btree():
    spec = {"dataset": "uniform:1M", "workload": "balanced", "match_rate": 256, "seed": 17}
    hire = run_benchmark("hire", WorkloadSpec(**spec), IndexParams())
    btree = run_benchmark("btree", WorkloadSpec(**spec))
    assert hire["content_digest"] == btree["content_digest"]
    assert hire["throughput"] >= 0.9 * btree["throughput"]
