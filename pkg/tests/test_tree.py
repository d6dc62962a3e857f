# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import sys
import threading

import numpy as np
import pytest
from traitlets import TraitError

from hireindex import HireIndex, IndexParams
from hireindex.core import KEY_MAX, KeyDomainError, NonIncreasingKeyError
from hireindex.leaf import LeafKind
from hireindex.oracle import SortedMapOracle
from hireindex.recalibration import JobKind
from hireindex.tree import BulkLoader


def pairs_of(keys):
    return [(k, k // 3 + 1) for k in keys]


def replay_random(index, oracle, rng, universe, n_ops, *, kinds=(0, 1, 2, 3), audit_every=0):
    """Drive `index` and `oracle` with the same random operations and compare them.

    `kinds` picks from get (0), range (1), insert (2) and delete (3).
    """
    n = len(universe)
    for i in range(n_ops):
        kind = kinds[int(rng.integers(len(kinds)))]
        k = universe[int(rng.integers(n))]
        if kind == 0:
            assert index.get(k) == oracle.get(k), f"get({k}) at op {i}"
        elif kind == 1:
            hi = universe[min(n - 1, int(rng.integers(n)) + 40)]
            lo, hi = min(k, hi), max(k, hi)
            limit = None if rng.integers(2) else int(rng.integers(1, 30))
            assert index.range(lo, hi, limit) == oracle.range(lo, hi, limit), f"range({lo}, {hi}, {limit}) at op {i}"
        elif kind == 2:
            v = int(rng.integers(1 << 62))
            index.insert(k, v)
            oracle.insert(k, v)
        else:
            assert index.delete(k) == oracle.delete(k), f"delete({k}) at op {i}"
        if audit_every and not (i + 1) % audit_every:
            assert index.quiesce()
            report = index.audit()
            assert report.ok, report.violations[:5]
            assert len(index) == len(oracle)


def test_empty_index(small):
    index = HireIndex(**small)
    assert index.get(5) is None
    assert index.range(0, 10) == []
    assert not index.delete(5)
    assert len(index) == 0
    assert index.audit().ok
    index.insert(5, 1)
    assert index.get(5) == 1
    assert 5 in index
    assert index.items() == [(5, 1)]
    assert index.height == 1
    assert index.audit().ok


def test_default_construction_starts_a_worker():
    with HireIndex() as index:
        assert index.params.f == 256
        assert index.engine._executor is not None
        assert index.engine.cost is index.params.cost
        index.insert(3, 4)
        assert index.get(3) == 4
        assert index.quiesce(timeout=10)
    assert index.engine._executor is None


def test_params_and_keywords_are_exclusive(small):
    with pytest.raises(TypeError, match="either params"):
        HireIndex(IndexParams(**small), f=32)
    index = HireIndex(IndexParams(**small))
    assert index.params.alpha == 32


def test_invalid_params_are_rejected():
    with pytest.raises(TraitError):
        HireIndex(f=2)
    with pytest.raises(TraitError, match="alpha"):
        HireIndex(f=16, alpha=1000)


def test_bulk_load_linear_keys(small):
    keys = list(range(0, 5000 * 1000, 1000))
    index = HireIndex.bulk_load(pairs_of(keys), **small)
    assert len(index) == 5000
    stats = index.stats()
    assert stats["model_leaves"] >= 1
    assert all(leaf.cnt <= index.params.beta for leaf in index.leaves())
    assert index.height == index._measure_height()
    assert index.height >= 2
    assert index.audit().ok
    assert all(index.get(k) == k // 3 + 1 for k in keys)
    assert index.get(500) is None
    assert index.model_error_violations() == []
    assert [e.key for e in index.range(10_000, 20_000)] == list(range(10_000, 20_001, 1000))
    assert index.items() == pairs_of(keys)


@pytest.mark.parametrize("name", ["uniform_keys", "segmented_keys"])
def test_bulk_load_synthetic(name, small, request):
    keys = request.getfixturevalue(name)[:6000]
    index = HireIndex.bulk_load(pairs_of(keys), **small)
    report = index.audit()
    assert report.ok, report.violations[:5]
    assert report.checked["entries"] == 6000
    assert index.model_error_violations() == []
    for k in keys[::7]:
        assert index.get(k) == k // 3 + 1
    leaves = list(index.leaves())
    assert sum(leaf.cnt for leaf in leaves) == 6000
    for leaf in leaves:
        if leaf.kind is LeafKind.model:
            assert index.params.alpha <= leaf.cnt <= index.params.beta
        else:
            assert leaf.cnt <= index.params.f


def test_audit_names_a_corrupted_node(uniform_keys, small):
    index = HireIndex.bulk_load(pairs_of(uniform_keys[:6000]), **small)
    assert index.audit().ok
    node = index.root
    slots = [j for j, c in enumerate(node.children) if c is not None]
    assert len(slots) >= 2
    node.keys[slots[0]] = node.keys[slots[1]] + 1
    report = index.audit()
    assert report.violations == [f"{node!r} separators are out of order"]


def test_bulk_load_without_legacy_leaves(uniform_keys, small):
    index = HireIndex.bulk_load(pairs_of(uniform_keys[:3000]), disable_legacy_leaves=True, **small)
    assert index.stats()["legacy_leaves"] == 0
    assert index.audit().ok
    assert index.model_error_violations() == []


def test_bulk_load_single_leaf(small):
    index = HireIndex.bulk_load([(1, 1), (2, 2), (3, 3)], **small)
    assert index.height == 1
    assert index.root is index.head
    assert index.range(0, KEY_MAX) == [(1, 1), (2, 2), (3, 3)]


def test_bulk_load_rejects_bad_input(small):
    with pytest.raises(NonIncreasingKeyError):
        HireIndex.bulk_load([(1, 1), (1, 2)], **small)
    with pytest.raises(NonIncreasingKeyError):
        HireIndex.bulk_load([(5, 1), (3, 2)], **small)
    with pytest.raises(KeyDomainError):
        HireIndex.bulk_load([(1, 1), (KEY_MAX + 1, 2)], **small)


def test_key_domain(small):
    index = HireIndex(**small)
    for bad in (-1, KEY_MAX + 1):
        with pytest.raises(KeyDomainError):
            index.insert(bad, 1)
        with pytest.raises(KeyDomainError):
            index.get(bad)
        with pytest.raises(KeyDomainError):
            index.delete(bad)
    index.insert(KEY_MAX, 3)
    assert index.get(KEY_MAX) == 3


def test_range_arguments(small):
    index = HireIndex.bulk_load(pairs_of(range(0, 10_000, 10)), **small)
    with pytest.raises(ValueError, match="Empty range"):
        index.range(20, 10)
    assert index.range(15, 15) == []
    assert index.range(20, 20) == [(20, 7)]
    assert [e.key for e in index.range(0, KEY_MAX, limit=3)] == [0, 10, 20]
    assert index.range(0, KEY_MAX, limit=0) == []
    assert len(index.range(0, KEY_MAX * 2)) == 1000


def test_upsert_and_delete_counts(small):
    index = HireIndex.bulk_load(pairs_of(range(0, 2000, 2)), **small)
    index.insert(10, 99)
    assert len(index) == 1000
    index.insert(11, 5)
    assert len(index) == 1001
    assert index.delete(11)
    assert not index.delete(11)
    assert len(index) == 1000
    assert index.get(10) == 99


def test_buffer_fill_triggers_retrain(small, jobs):
    keys = list(range(0, 200_000, 1000))
    index = HireIndex.bulk_load(pairs_of(keys), **small)
    leaf = next(leaf for leaf in index.leaves() if leaf.kind is LeafKind.model)
    base = leaf.keys[0]
    # No tombstones yet, so every insert lands in the buffer.
    for j in range(index.params.tau):
        index.insert(base + 1 + j, j)
    assert leaf.under_retrain
    assert index.engine.active_jobs() == 1
    index.insert(base + 500, 7)
    assert index.get(base + 500) == 7
    assert index.get(base + 3) == 2
    assert index.quiesce()
    assert leaf.retired
    assert {job.kind for _, job, _ in jobs.published} == {JobKind.retrain}
    assert jobs.errors == []
    assert index.get(base + 500) == 7
    assert all(index.get(base + 1 + j) == j for j in range(index.params.tau))
    assert index.audit().ok
    assert index.model_error_violations() == []


def test_deletes_convert_model_leaf(small, jobs):
    keys = list(range(0, 200_000, 1000))
    index = HireIndex.bulk_load(pairs_of(keys), **small)
    leaf = next(leaf for leaf in index.leaves() if leaf.kind is LeafKind.model)
    victims = leaf.keys[: leaf.cnt - index.params.alpha + 1]
    for k in victims:
        assert index.delete(k)
    assert leaf.under_retrain
    assert index.quiesce()
    kinds = [job.kind for _, job, _ in jobs.published]
    assert JobKind.convert_to_legacy in kinds
    assert all(index.get(k) is None for k in victims)
    assert len(index) == len(keys) - len(victims)
    report = index.audit()
    assert report.ok, report.violations[:5]


def test_force_retrain_all_folds_buffers(segmented_keys, small):
    keys = segmented_keys[:8000]
    index = HireIndex.bulk_load(pairs_of(keys[::2]), **small)
    for k in keys[1::8]:
        index.insert(k, 1)
    assert index.quiesce()
    requested = index.force_retrain_all()
    assert requested == index.stats()["model_leaves"]
    assert index.quiesce()
    assert index.stats()["buffered_entries"] == 0
    assert index.model_error_violations() == []
    assert index.audit().ok
    assert len(index) == len(keys[::2]) + len(keys[1::8])


@pytest.mark.parametrize(
    "mode",
    [{}, {"blocking_recalibration": True}, {"disable_legacy_leaves": True}],
    ids=["deferred", "blocking", "no-legacy"],
)
def test_random_operations_match_oracle(mode, segmented_keys, small, jobs):
    universe = segmented_keys[:8000]
    bulk = pairs_of(universe[::2])
    index = HireIndex.bulk_load(bulk, **small, **mode)
    oracle = SortedMapOracle(bulk)
    rng = np.random.default_rng(99)
    with index:
        replay_random(index, oracle, rng, universe, 6000, audit_every=1000)
        assert index.quiesce()
        assert index.items() == oracle.items()
    assert jobs.errors == []
    assert index.engine.counters["published"] > 0
    assert index.model_error_violations() == []


def test_delete_everything_then_reinsert(small):
    keys = list(range(0, 3000 * 7, 7))
    index = HireIndex.bulk_load(pairs_of(keys), **small)
    for k in keys:
        assert index.delete(k)
    assert index.quiesce()
    assert len(index) == 0
    assert index.items() == []
    assert index.audit().ok
    for k in keys[::3]:
        index.insert(k, 1)
    assert index.quiesce()
    assert [e.key for e in index.items()] == keys[::3]
    assert index.audit().ok


def test_ascending_inserts_raise_separators(small):
    index = HireIndex(**small)
    for k in range(0, 5000):
        index.insert(k * 3, k)
    assert index.quiesce()
    assert index.get(4999 * 3) == 4999
    assert index.range(14_990, KEY_MAX) == [(14_991, 4997), (14_994, 4998), (14_997, 4999)]
    report = index.audit()
    assert report.ok, report.violations[:5]
    assert index.height > 1


def test_memory_and_stats(small):
    index = HireIndex.bulk_load(pairs_of(range(0, 4000, 2)), **small)
    stats = index.stats()
    assert stats["size"] == 2000
    assert stats["memory_bytes"] == index.memory_bytes() > 2000 * 16
    assert stats["engine"]["published"] == 0
    assert stats["params"]["f"] == 16


def test_background_worker_publishes_under_readers(segmented_keys):
    keys = segmented_keys[:6000]
    index = HireIndex.bulk_load(pairs_of(keys), f=16)
    errors = []

    def reader(offset):
        for k in keys[offset::5]:
            if index.get(k) != k // 3 + 1:
                errors.append(k)

    with index:
        assert index.engine._executor is not None
        requested = index.force_retrain_all()
        threads = [threading.Thread(target=reader, args=(i,)) for i in range(3)]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert index.quiesce(timeout=60)
        assert index.engine.counters["published"] >= requested > 0
        assert errors == []
        assert index.audit().ok
        assert index.grace.pending == 0


def read_until(index, expected, stop, torn):
    "Reader thread body: keep checking `expected` until `stop` is set."
    while True:
        for k, v in expected:
            got = index.get(k)
            if got != v:
                torn.append((k, got))
        if stop.is_set():
            return


def test_replay_does_not_tear_concurrent_reads(segmented_keys):
    keys = segmented_keys[:4000]
    present = set(keys)
    index = HireIndex.bulk_load(pairs_of(keys), f=16, background_worker=False)
    assert index.force_retrain_all() > 0
    gaps = [k + 1 for k in keys if k < KEY_MAX and k + 1 not in present]
    for k in gaps:
        index.insert(k, 0)
    assert index.metrics["logged"] > 0
    stop = threading.Event()
    torn = []
    readers = [
        threading.Thread(target=read_until, args=(index, pairs_of(keys[i::7]), stop, torn)) for i in range(3)
    ]
    interval = sys.getswitchinterval()
    sys.setswitchinterval(1e-6)
    try:
        for t in readers:
            t.start()
        assert index.engine.run_pending() > 0
    finally:
        stop.set()
        for t in readers:
            t.join()
        sys.setswitchinterval(interval)
    assert torn == []
    assert all(index.get(k) == 0 for k in gaps)
    assert len(index) == len(keys) + len(gaps)
    assert index.quiesce()
    assert index.audit().ok


def test_background_worker_with_writes_and_readers(segmented_keys, jobs):
    universe = segmented_keys[:6000]
    stable = universe[::10]
    bulk = pairs_of(universe[::2])
    oracle = SortedMapOracle(bulk)
    rng = np.random.default_rng(5)
    written = [k for i, k in enumerate(universe) if i % 10]
    stop = threading.Event()
    torn = []
    index = HireIndex.bulk_load(bulk, f=16)
    readers = [threading.Thread(target=read_until, args=(index, pairs_of(stable[i::3]), stop, torn)) for i in range(3)]
    with index:
        for t in readers:
            t.start()
        try:
            replay_random(index, oracle, rng, written, 4000, kinds=(0, 2, 2, 3))
        finally:
            stop.set()
            for t in readers:
                t.join()
        assert index.quiesce(timeout=60)
        assert torn == []
        assert index.items() == oracle.items()
        assert index.audit().ok
    assert jobs.errors == []


def test_bulk_loader_group_sizes(uniform_keys):
    params = IndexParams(f=16, background_worker=False)
    loader = BulkLoader(params)
    assert loader.fill == 12
    items = [(k, k, object()) for k in uniform_keys[:2000:4]]
    groups = loader._internal_level(items)
    sizes = [node.cnt for _, _, node in groups]
    assert sum(sizes) == len(items)
    assert all(params.f // 2 <= s <= params.f for s in sizes)
