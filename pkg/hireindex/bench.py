# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
"""The `hire-bench` command line application."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import time
from fractions import Fraction
from pathlib import Path
from typing import TYPE_CHECKING, Any

import numpy as np
from traitlets import Bool, Enum, Int, Unicode
from traitlets.config import Application

from hireindex._version import __version__
from hireindex.btree import BaselineBTree
from hireindex.core import CostModelParams, IndexParams, OperationError, OracleMismatchError
from hireindex.datasets import load_dataset
from hireindex.leaf import LeafKind
from hireindex.oracle import SortedMapOracle
from hireindex.tree import HireIndex
from hireindex.workload import Op, OpKind, WorkloadSpec, gen_workload, parse_ratio

if TYPE_CHECKING:
    from collections.abc import Sequence

__all__ = ["PERCENTILES", "BenchApp", "content_digest", "percentiles", "run_benchmark", "run_ops"]

PERCENTILES = (50, 75, 90, 99, 99.9)


def percentiles(latencies: Sequence[int] | np.ndarray, ranks: Sequence[float] = PERCENTILES) -> dict[float, int]:
    """Nearest-rank percentiles of `latencies`."""
    data = np.sort(np.asarray(latencies))
    n = data.size
    if not n:
        msg = "percentiles of an empty sample"
        raise ValueError(msg)
    out = {}
    for p in ranks:
        rank = math.ceil(Fraction(str(p)) * n / 100)
        out[p] = int(data[min(n, max(1, rank)) - 1])
    return out


def content_digest(items) -> str:
    "SHA-256 over the (key, value) pairs of a full scan."
    h = hashlib.sha256()
    for k, v in items:
        h.update(k.to_bytes(8, "little"))
        h.update(int(v).to_bytes(8, "little"))
    return h.hexdigest()


def _dispatch(index, op: Op):
    match op.kind:
        case OpKind.get:
            return index.get(op.key)
        case OpKind.range:
            return index.range(op.key, op.arg)
        case OpKind.insert:
            return index.insert(op.key, op.arg)
        case OpKind.delete:
            return index.delete(op.key)


def run_ops(index, ops: Sequence[Op], *, oracle: SortedMapOracle | None = None, memory_every: int = 0):
    """Replay `ops` on one thread; return (latencies in ns, memory samples).

    Each latency covers one call from submission to completion. With an
    oracle every result is checked right after the timed call.
    """
    latencies = np.zeros(len(ops), dtype=np.int64)
    memory: list[int] = []
    clock = time.perf_counter_ns
    for i, op in enumerate(ops):
        start = clock()
        try:
            result = _dispatch(index, op)
        except Exception as e:
            msg = f"Operation {i} {op} failed: {e!r}"
            raise OperationError(msg, i) from e
        latencies[i] = clock() - start
        if oracle is not None:
            oracle.check(i, op, result)
        if memory_every and not (i + 1) % memory_every:
            memory.append(index.memory_bytes())
    return latencies, memory


def run_benchmark(
    index_kind: str,
    spec: WorkloadSpec,
    params: IndexParams | None = None,
    *,
    keys: list[int] | None = None,
    oracle_check: bool = False,
    memory_samples: int = 20,
    btree_fanout: int = 256,
    shift_keys: bool = False,
    latency_csv: str | Path | None = None,
    parent=None,
) -> dict[str, Any]:
    """Bulk load, replay the workload and summarise the run as a JSON-ready dict."""
    log = spec.log
    if keys is None:
        keys = load_dataset(spec.dataset, spec.seed, shift=shift_keys)
    workload = gen_workload(keys, spec)
    log.info("Dataset %s: %d keys, %d bulk, %d ops", spec.dataset, len(keys), len(workload.bulk), len(workload.ops))

    start = time.perf_counter()
    if index_kind == "hire":
        params = params if params is not None else IndexParams()
        index = HireIndex.bulk_load(workload.bulk, params, parent=parent)
    elif index_kind == "btree":
        index = BaselineBTree.bulk_load(workload.bulk, btree_fanout)
    else:
        msg = f"Unknown index kind {index_kind!r}"
        raise ValueError(msg)
    build_seconds = time.perf_counter() - start
    log.info("Built %s in %.3fs", index_kind, build_seconds)

    oracle = SortedMapOracle(workload.bulk) if oracle_check else None
    ops = workload.ops
    memory_every = max(1, len(ops) // memory_samples) if memory_samples and ops else 0
    with index:
        wall = time.perf_counter()
        latencies, memory = run_ops(index, ops, oracle=oracle, memory_every=memory_every)
        wall = time.perf_counter() - wall
        index.quiesce()
        log.info("Replayed %d ops in %.3fs", len(ops), wall)
        items = index.items()
        if oracle is not None and not oracle.check_contents(items):
            oracle.mismatches += 1
            msg = f"Final contents differ from the oracle ({len(items)} vs {len(oracle)} entries)"
            raise OracleMismatchError(msg, len(ops))
        audit = index.audit()
        stats = index.stats()
        report: dict[str, Any] = {
            "version": __version__,
            "index": index_kind,
            "config": {
                "workload": spec.describe(),
                "params": params.describe() if index_kind == "hire" else {"fanout": btree_fanout},
            },
            "dataset_size": len(keys),
            "build_seconds": build_seconds,
            "ops": len(ops),
            "op_counts": {str(kind): 0 for kind in OpKind},
            "insert_pool_exhausted": workload.insert_pool_exhausted,
            "wall_seconds": wall,
            "throughput": 0.0,
            "latency_ns": {},
            "memory": {
                "accounting": "structural bytes: 16 per stored entry or slot plus a 64-byte node header",
                "every_ops": memory_every,
                "samples": memory,
                "mean": float(np.mean(memory)) if memory else float(index.memory_bytes()),
            },
            "final_size": len(items),
            "content_digest": content_digest(items),
            "audit": {"ok": audit.ok, "violations": audit.violations[:20]},
            "oracle": {"checked": oracle is not None, "mismatches": oracle.mismatches if oracle else 0},
            "stats": stats,
        }
    for op in ops:
        report["op_counts"][str(op.kind)] += 1
    busy = int(latencies.sum())
    if ops:
        report["throughput"] = len(ops) / (busy / 1e9) if busy else math.inf
        report["latency_ns"] = {f"p{p:g}": v for p, v in percentiles(latencies).items()}
        report["latency_ns"]["mean"] = float(latencies.mean())
    if index_kind == "hire":
        report["model_leaves"] = sum(1 for leaf in index.leaves() if leaf.kind is LeafKind.model)
        report["model_error_violations"] = len(index.model_error_violations())
    if latency_csv:
        with Path(latency_csv).open("w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(("op_index", "kind", "latency_ns"))
            writer.writerows((i, op.kind, int(t)) for i, (op, t) in enumerate(zip(ops, latencies)))
    return report


class BenchApp(Application):
    """Benchmark a HIRE index or the baseline B+-tree on a generated workload."""

    name = "hire-bench"
    description = "Bulk load a dataset, replay a mixed workload and write a JSON report."
    version = __version__
    classes = [IndexParams, CostModelParams, WorkloadSpec]

    index = Enum(["hire", "btree"], "hire", help="Index under test").tag(config=True)
    ratio = Unicode("", help="Q:I:D weights, overriding --workload").tag(config=True)
    out = Unicode("report.json", help="Path of the JSON report").tag(config=True)
    latency_csv = Unicode("", help="Optional CSV dump of per-operation latencies").tag(config=True)
    oracle_check = Bool(False, help="Co-replay every operation on a sorted-map oracle").tag(config=True)
    shift_keys = Bool(False, help="Halve SOSD keys at or above 2**63 instead of rejecting them").tag(config=True)
    memory_samples = Int(20, help="Number of memory samples taken over the run").tag(config=True)
    btree_fanout = Int(256, help="Fanout of the baseline B+-tree").tag(config=True)

    aliases = {
        **Application.aliases,
        "index": "BenchApp.index",
        "dataset": "WorkloadSpec.dataset",
        "bulk-frac": "WorkloadSpec.bulk_fraction",
        "ops-frac": "WorkloadSpec.ops_fraction",
        "workload": "WorkloadSpec.workload",
        "ratio": "BenchApp.ratio",
        "match-rate": "WorkloadSpec.match_rate",
        "query-mode": "WorkloadSpec.query_mode",
        "seed": "WorkloadSpec.seed",
        "f": "IndexParams.f",
        "out": "BenchApp.out",
        "latency-csv": "BenchApp.latency_csv",
    }
    flags = {
        **Application.flags,
        "no-legacy-leaves": (
            {"IndexParams": {"disable_legacy_leaves": True}},
            "Ablation: build model leaves only.",
        ),
        "blocking-recalibration": (
            {"IndexParams": {"blocking_recalibration": True}},
            "Ablation: run recalibration on the foreground thread.",
        ),
        "oracle-check": ({"BenchApp": {"oracle_check": True}}, "Validate every result against a sorted map."),
        "shift-keys": ({"BenchApp": {"shift_keys": True}}, "Halve out-of-domain SOSD keys."),
    }

    def start(self):
        spec = WorkloadSpec(parent=self)
        if self.ratio:
            spec.ratio = list(parse_ratio(self.ratio))
        params = IndexParams(parent=self) if self.index == "hire" else None
        self.log.info("Benchmarking %s on %s (seed %d)", self.index, spec.dataset, spec.seed)
        try:
            report = run_benchmark(
                self.index,
                spec,
                params,
                oracle_check=self.oracle_check,
                memory_samples=self.memory_samples,
                btree_fanout=self.btree_fanout,
                shift_keys=self.shift_keys,
                latency_csv=self.latency_csv or None,
                parent=self,
            )
        except OracleMismatchError as e:
            self.log.error("Oracle mismatch at operation %d: %s", e.op_index, e)
            self.exit(1)
        except OperationError as e:
            self.log.error("%s", e)
            self.exit(2)
        Path(self.out).write_text(json.dumps(report, indent=2, default=str))
        self.log.info(
            "Wrote %s: %.0f ops/s, p99.9 %s ns", self.out, report["throughput"], report["latency_ns"].get("p99.9")
        )
