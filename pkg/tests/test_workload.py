# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

from collections import Counter

import pytest
from sortedcontainers import SortedList
from traitlets import TraitError

from hireindex.workload import OpKind, WorkloadSpec, gen_workload, parse_ratio

KEYS = list(range(0, 50_000, 5))


def replay_live_set(workload, match_rate):
    "Walk the operations against the live set they were drawn from."
    live = SortedList(k for k, _ in workload.bulk)
    seen = set(live)
    for op in workload.ops:
        if op.kind is OpKind.insert:
            assert op.key not in seen
            seen.add(op.key)
            live.add(op.key)
        elif op.kind is OpKind.delete:
            live.remove(op.key)
        elif op.kind is OpKind.range:
            j = live.index(op.key)
            assert op.arg == live[min(j + match_rate - 1, len(live) - 1)]
        else:
            assert op.key in live
    return live


def test_balanced_workload():
    spec = WorkloadSpec(seed=7, match_rate=16)
    wl = gen_workload(KEYS, spec)
    assert len(wl.bulk) == 2000
    assert [k for k, _ in wl.bulk] == sorted(k for k, _ in wl.bulk)
    assert len(wl.ops) == 7500
    assert wl.insert_pool_exhausted == 0
    counts = Counter(op.kind for op in wl.ops)
    assert counts[OpKind.get] == 0
    for kind in (OpKind.range, OpKind.insert, OpKind.delete):
        assert 2200 < counts[kind] < 2800
    replay_live_set(wl, 16)


def test_workload_is_deterministic():
    spec = WorkloadSpec(seed=3)
    assert gen_workload(KEYS, spec) == gen_workload(KEYS, spec)
    assert gen_workload(KEYS, WorkloadSpec(seed=4)).ops != gen_workload(KEYS, spec).ops


def test_read_heavy_point_queries():
    spec = WorkloadSpec(workload="read-heavy", query_mode="point", seed=1)
    wl = gen_workload(KEYS, spec)
    counts = Counter(op.kind for op in wl.ops)
    assert counts[OpKind.range] == 0
    assert counts[OpKind.get] > 0.7 * len(wl.ops)
    replay_live_set(wl, spec.match_rate)


def test_explicit_ratio_overrides_preset():
    spec = WorkloadSpec(workload="read-heavy", ratio=[0, 1, 0], seed=2)
    assert spec.weights == (0, 1, 0)
    wl = gen_workload(KEYS, spec)
    assert {op.kind for op in wl.ops} == {OpKind.insert}
    assert spec.describe()["ratio"] == [0, 1, 0]


def test_exhausted_insert_pool_turns_into_queries():
    spec = WorkloadSpec(workload="write-heavy", bulk_fraction=0.9, ops_fraction=1.0, seed=5)
    wl = gen_workload(KEYS, spec)
    counts = Counter(op.kind for op in wl.ops)
    assert counts[OpKind.insert] == 1000
    assert wl.insert_pool_exhausted > 0
    assert counts[OpKind.range] >= wl.insert_pool_exhausted
    replay_live_set(wl, spec.match_rate)


def test_parse_ratio():
    assert parse_ratio("8:1:1") == (8.0, 1.0, 1.0)
    with pytest.raises(ValueError, match="Q:I:D"):
        parse_ratio("1:1")


@pytest.mark.parametrize(
    "kwargs",
    [
        {"bulk_fraction": 0.0},
        {"ops_fraction": -1.0},
        {"ratio": [1.0, 1.0]},
        {"ratio": [0.0, 0.0, 0.0]},
        {"match_rate": 0},
        {"workload": "mostly-reads"},
    ],
)
def test_spec_validation(kwargs):
    with pytest.raises(TraitError):
        WorkloadSpec(**kwargs)
