# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
"""A classic B+-tree used as the benchmark baseline.

Sorted-array nodes with binary search, sibling-chained leaves, split at
fanout + 1 and merge or borrow below half full. It exposes the same read and
write surface as `HireIndex` so the benchmark drives both the same way.
"""

from __future__ import annotations

from bisect import bisect_left, bisect_right
from typing import TYPE_CHECKING

from hireindex.core import KEY_MAX, Entry, NonIncreasingKeyError, check_key, chunk_evenly
from hireindex.leaf import NODE_HEADER_BYTES, SLOT_BYTES
from hireindex.tree import AuditReport

if TYPE_CHECKING:
    from collections.abc import Iterable, Iterator

__all__ = ["BaselineBTree"]


class _BLeaf:
    is_leaf = True
    __slots__ = ("keys", "next", "prev", "values")

    def __init__(self, keys: list[int] | None = None, values: list[int] | None = None):
        self.keys = keys if keys is not None else []
        self.values = values if values is not None else []
        self.next: _BLeaf | None = None
        self.prev: _BLeaf | None = None


class _BInner:
    """`children[i]` holds the keys in [keys[i-1], keys[i])."""

    is_leaf = False
    __slots__ = ("children", "keys")

    def __init__(self, keys: list[int], children: list):
        self.keys = keys
        self.children = children


class BaselineBTree:
    def __init__(self, fanout: int = 256):
        if fanout < 4:
            msg = f"fanout must be >= 4 but got {fanout}"
            raise ValueError(msg)
        self.fanout = fanout
        self.min_fill = fanout // 2
        self.root: _BLeaf | _BInner = _BLeaf()
        self.head: _BLeaf = self.root
        self._count = 0

    def __repr__(self):
        return f"<BaselineBTree n={self._count} fanout={self.fanout}>"

    def __len__(self):
        return self._count

    def __contains__(self, k: int):
        return self.get(k) is not None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    @classmethod
    def bulk_load(cls, pairs: Iterable[tuple[int, int]], fanout: int = 256) -> BaselineBTree:
        tree = cls(fanout)
        keys: list[int] = []
        values: list[int] = []
        for k, v in pairs:
            if keys and k <= keys[-1]:
                msg = f"Bulk-load keys must be strictly increasing: {k} after {keys[-1]}"
                raise NonIncreasingKeyError(msg)
            keys.append(check_key(k))
            values.append(v)
        if not keys:
            return tree
        leaves = []
        start = 0
        for chunk in chunk_evenly(keys, fanout):
            end = start + len(chunk)
            leaves.append(_BLeaf(chunk, values[start:end]))
            start = end
        for left, right in zip(leaves, leaves[1:]):
            left.next = right
            right.prev = left
        level = [(leaf.keys[0], leaf) for leaf in leaves]
        while len(level) > 1:
            level = [
                (group[0][0], _BInner([low for low, _ in group[1:]], [node for _, node in group]))
                for group in chunk_evenly(level, fanout)
            ]
        tree.root = level[0][1]
        tree.head = leaves[0]
        tree._count = len(keys)
        return tree

    def _leaf_path(self, k: int) -> tuple[_BLeaf, list[tuple[_BInner, int]]]:
        path = []
        node = self.root
        while not node.is_leaf:
            i = bisect_right(node.keys, k)
            path.append((node, i))
            node = node.children[i]
        return node, path

    def get(self, k: int) -> int | None:
        node = self.root
        while not node.is_leaf:
            node = node.children[bisect_right(node.keys, k)]
        i = bisect_left(node.keys, k)
        if i < len(node.keys) and node.keys[i] == k:
            return node.values[i]
        return None

    def range(self, lo: int, hi: int, limit: int | None = None) -> list[Entry]:
        if lo > hi:
            msg = f"Empty range: lo={lo} > hi={hi}"
            raise ValueError(msg)
        leaf, _ = self._leaf_path(lo)
        i = bisect_left(leaf.keys, lo)
        out: list[Entry] = []
        while leaf is not None:
            keys = leaf.keys
            j = bisect_right(keys, hi, i)
            out.extend(Entry(keys[x], leaf.values[x]) for x in range(i, j))
            if (limit is not None and len(out) >= limit) or j < len(keys):
                break
            leaf = leaf.next
            i = 0
        if limit is not None:
            del out[limit:]
        return out

    def items(self) -> list[Entry]:
        return self.range(0, KEY_MAX)

    def leaves(self) -> Iterator[_BLeaf]:
        node = self.head
        while node is not None:
            yield node
            node = node.next

    def insert(self, k: int, v: int) -> None:
        check_key(k)
        leaf, path = self._leaf_path(k)
        keys = leaf.keys
        i = bisect_left(keys, k)
        if i < len(keys) and keys[i] == k:
            leaf.values[i] = v
            return
        keys.insert(i, k)
        leaf.values.insert(i, v)
        self._count += 1
        if len(keys) > self.fanout:
            self._split(leaf, path)

    def _split(self, node, path: list[tuple[_BInner, int]]) -> None:
        mid = self._size(node) // 2
        if node.is_leaf:
            right = _BLeaf(node.keys[mid:], node.values[mid:])
            del node.keys[mid:]
            del node.values[mid:]
            right.next = node.next
            right.prev = node
            if node.next is not None:
                node.next.prev = right
            node.next = right
            promoted = right.keys[0]
        else:
            promoted = node.keys[mid - 1]
            right = _BInner(node.keys[mid:], node.children[mid:])
            del node.keys[mid - 1 :]
            del node.children[mid:]
        if not path:
            self.root = _BInner([promoted], [node, right])
            return
        parent, i = path[-1]
        parent.keys.insert(i, promoted)
        parent.children.insert(i + 1, right)
        if len(parent.children) > self.fanout:
            self._split(parent, path[:-1])

    def delete(self, k: int) -> bool:
        check_key(k)
        leaf, path = self._leaf_path(k)
        keys = leaf.keys
        i = bisect_left(keys, k)
        if i >= len(keys) or keys[i] != k:
            return False
        del keys[i]
        del leaf.values[i]
        self._count -= 1
        if path and len(keys) < self.min_fill:
            self._rebalance(path)
        return True

    @staticmethod
    def _size(node) -> int:
        return len(node.keys) if node.is_leaf else len(node.children)

    def _rebalance(self, path: list[tuple[_BInner, int]]) -> None:
        parent, i = path[-1]
        if i + 1 < len(parent.children):
            li = i
        else:
            li = i - 1
        left, right = parent.children[li], parent.children[li + 1]
        if self._size(left) + self._size(right) <= self.fanout:
            self._merge(parent, li, left, right)
        else:
            self._borrow(parent, li, left, right)
            return
        if len(path) == 1:
            if len(parent.children) == 1:
                self.root = parent.children[0]
        elif len(parent.children) < self.min_fill:
            self._rebalance(path[:-1])

    def _merge(self, parent: _BInner, li: int, left, right) -> None:
        if left.is_leaf:
            left.keys.extend(right.keys)
            left.values.extend(right.values)
            left.next = right.next
            if right.next is not None:
                right.next.prev = left
        else:
            left.keys.append(parent.keys[li])
            left.keys.extend(right.keys)
            left.children.extend(right.children)
        del parent.keys[li]
        del parent.children[li + 1]

    def _borrow(self, parent: _BInner, li: int, left, right) -> None:
        if left.is_leaf:
            keys = left.keys + right.keys
            values = left.values + right.values
            mid = len(keys) // 2
            left.keys, right.keys = keys[:mid], keys[mid:]
            left.values, right.values = values[:mid], values[mid:]
            parent.keys[li] = right.keys[0]
            return
        keys = [*left.keys, parent.keys[li], *right.keys]
        children = left.children + right.children
        mid = len(children) // 2
        left.keys, left.children = keys[: mid - 1], children[:mid]
        parent.keys[li] = keys[mid - 1]
        right.keys, right.children = keys[mid:], children[mid:]

    def memory_bytes(self) -> int:
        total = 0
        stack = [self.root]
        while stack:
            node = stack.pop()
            if node.is_leaf:
                total += NODE_HEADER_BYTES + SLOT_BYTES * len(node.keys)
            else:
                total += NODE_HEADER_BYTES + SLOT_BYTES * len(node.children)
                stack.extend(node.children)
        return total

    def height(self) -> int:
        h = 1
        node = self.root
        while not node.is_leaf:
            node = node.children[0]
            h += 1
        return h

    def stats(self) -> dict:
        return {
            "size": self._count,
            "height": self.height(),
            "leaves": sum(1 for _ in self.leaves()),
            "fanout": self.fanout,
            "memory_bytes": self.memory_bytes(),
        }

    def quiesce(self, timeout: float | None = None) -> bool:  # noqa: ARG002
        return True

    def close(self) -> None:
        pass

    def audit(self) -> AuditReport:
        """Balanced, sorted, separators respected, half full below the root."""
        report = AuditReport()
        depths: set[int] = set()
        dfs_leaves: list[_BLeaf] = []

        def visit(node, depth: int, low: int | None, high: int | None) -> None:
            keys = node.keys
            if any(a >= b for a, b in zip(keys, keys[1:])):
                report.add(f"node at depth {depth} has unsorted keys")
            if node is not self.root and self._size(node) < self.min_fill:
                report.add(f"node at depth {depth} holds {self._size(node)} < {self.min_fill}")
            if self._size(node) > self.fanout:
                report.add(f"node at depth {depth} holds {self._size(node)} > {self.fanout}")
            if node.is_leaf:
                report.checked["leaves"] += 1
                report.checked["entries"] += len(keys)
                depths.add(depth)
                dfs_leaves.append(node)
                if keys and ((low is not None and keys[0] < low) or (high is not None and keys[-1] >= high)):
                    report.add(f"leaf at depth {depth} escapes its separators [{low}, {high})")
                return
            report.checked["internal"] += 1
            if len(node.children) != len(keys) + 1:
                report.add(f"inner node at depth {depth} has {len(keys)} keys for {len(node.children)} children")
                return
            bounds = [low, *keys, high]
            for i, child in enumerate(node.children):
                visit(child, depth + 1, bounds[i], bounds[i + 1])

        visit(self.root, 1, None, None)
        if len(depths) > 1:
            report.add(f"leaves at depths {sorted(depths)}")
        chain = list(self.leaves())
        if len(chain) != len(dfs_leaves) or any(a is not b for a, b in zip(chain, dfs_leaves)):
            report.add("sibling chain does not visit the leaves in tree order")
        total = sum(len(leaf.keys) for leaf in dfs_leaves)
        if total != self._count:
            report.add(f"leaves hold {total} entries but the tree counts {self._count}")
        return report
