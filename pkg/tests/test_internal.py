# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import pytest

from hireindex.core import FLAG_BIT, LIVE_MASK, InvariantError, LogFullError
from hireindex.internal import InternalInsert, InternalNode, retrain_and_remap, route
from hireindex.leaf import DeleteOutcome


class Child:
    def __init__(self, name):
        self.name = name

    def __repr__(self):
        return f"Child({self.name})"


def expected_child(node, k):
    pairs = node.live_pairs()
    for sep, child in pairs:
        if sep >= k:
            return child
    return pairs[-1][1]


def check_node(node):
    live = [k for k, c in zip(node.keys, node.children) if c is not None]
    assert live == sorted(live)
    cleared = [k & LIVE_MASK for k in node.keys]
    assert cleared == sorted(cleared)
    assert node.cnt == len(node.live_pairs())
    assert len(node.log) <= node.log_cap


def four_children():
    children = [Child(i) for i in range(4)]
    node = InternalNode.build(list(zip((10, 20, 30, 40), children)), 8)
    return node, children


def test_build_lays_out_predicted_slots():
    node, children = four_children()
    assert node.cnt == 4
    assert node.log_cap == 1
    assert [node.children.index(c) for c in children] == [0, 2, 4, 6]
    assert node.bound == 0
    assert node.keys[1] == 10 | FLAG_BIT
    check_node(node)


def test_route():
    node, children = four_children()
    assert route(node, 0) is children[0]
    assert route(node, 10) is children[0]
    assert route(node, 11) is children[1]
    assert route(node, 40) is children[3]
    assert route(node, 1000) is children[3]


def test_insert_logs_then_remaps():
    node, children = four_children()
    extra = Child("11")
    assert node.insert(11, extra) == (InternalInsert.logged, None)
    assert route(node, 11) is extra
    assert route(node, 15) is children[1]
    with pytest.raises(LogFullError):
        node.insert(12, Child("12"), strict=True)
    outcome, right = node.insert(12, Child("12"))
    assert outcome is InternalInsert.remapped
    assert right is None
    assert not node.log
    assert [sep for sep, _ in node.live_pairs()] == [10, 11, 12, 20, 30, 40]
    assert route(node, 11) is extra
    check_node(node)


def test_insert_split():
    children = [Child(i) for i in range(8)]
    node = InternalNode.build([(10 * (i + 1), c) for i, c in enumerate(children)], 8)
    outcome, right = node.insert(85, Child("85"))
    assert outcome is InternalInsert.split
    assert node.cnt == 4
    assert right.cnt == 5
    assert node.max_separator() == 40
    assert [sep for sep, _ in right.live_pairs()] == [50, 60, 70, 80, 85]
    check_node(node)
    check_node(right)


def test_routing_stays_exact_under_inserts(rng):
    f = 32
    seps = sorted({int(x) for x in rng.integers(0, 1 << 40, size=200)})
    initial = seps[::16]
    node = InternalNode.build([(s, Child(s)) for s in initial], f)
    rest = [s for s in seps if s not in set(initial)]
    rng.shuffle(rest)
    for s in rest:
        outcome, right = node.insert(s, Child(s))
        if outcome is InternalInsert.split:
            break
        check_node(node)
        for key in rng.integers(0, 1 << 40, size=20).tolist() + [s, s + 1]:
            assert route(node, key) is expected_child(node, key)


def test_remove_and_underflow():
    node, children = four_children()
    assert node.remove_child(children[1]) is DeleteOutcome.underflow
    assert node.cnt == 3
    assert route(node, 15) is children[2]
    assert node.delete(30) is DeleteOutcome.underflow
    with pytest.raises(InvariantError):
        node.delete(30)
    with pytest.raises(InvariantError):
        node.remove_child(children[1])
    check_node(node)


def test_replace_separator_and_child():
    node, children = four_children()
    node.replace_separator(children[3], 100)
    assert node.separator_of(children[3]) == 100
    assert route(node, 99) is children[3]
    logged = Child("log")
    node.insert(11, logged)
    node.replace_separator(logged, 12)
    assert node.separator_of(logged) == 12
    new = Child("new")
    node.replace_child(logged, new)
    assert route(node, 12) is new
    with pytest.raises(InvariantError):
        node.separator_of(logged)


def test_snapshot_is_independent():
    node, children = four_children()
    copy = node.snapshot()
    copy.replace_child(children[0], Child("x"))
    assert route(node, 5) is children[0]
    assert copy.cnt == node.cnt


def test_remap_empty():
    node, _ = four_children()
    retrain_and_remap(node, [])
    assert node.cnt == 0
    assert node.live_pairs() == []
