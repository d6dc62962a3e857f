# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
"""Sorted-map reference used to validate index results operation by operation."""

from __future__ import annotations

from typing import TYPE_CHECKING

from sortedcontainers import SortedDict

from hireindex.core import Entry
from hireindex.hookspecs import pm
from hireindex.workload import Op, OpKind

if TYPE_CHECKING:
    from collections.abc import Iterable

__all__ = ["SortedMapOracle"]


class SortedMapOracle:
    def __init__(self, pairs: Iterable[tuple[int, int]] = ()):
        self.data = SortedDict(pairs)
        self.mismatches = 0

    def __len__(self):
        return len(self.data)

    def get(self, k: int) -> int | None:
        return self.data.get(k)

    def range(self, lo: int, hi: int, limit: int | None = None) -> list[Entry]:
        keys = self.data.irange(lo, hi)
        out = []
        for k in keys:
            if limit is not None and len(out) >= limit:
                break
            out.append(Entry(k, self.data[k]))
        return out

    def insert(self, k: int, v: int) -> None:
        self.data[k] = v

    def delete(self, k: int) -> bool:
        return self.data.pop(k, None) is not None

    def items(self) -> list[Entry]:
        return [Entry(k, v) for k, v in self.data.items()]

    def apply(self, op: Op):
        "Run `op` and return its result in the form the indexes return it."
        match op.kind:
            case OpKind.get:
                return self.get(op.key)
            case OpKind.range:
                return self.range(op.key, op.arg)
            case OpKind.insert:
                return self.insert(op.key, op.arg)
            case OpKind.delete:
                return self.delete(op.key)

    def check(self, op_index: int, op: Op, actual) -> bool:
        """Apply `op` to the oracle and compare with the index's `actual` result.

        A mismatch goes to the `on_oracle_mismatch` hook, which raises unless a
        plugin swallows it. Returns True when the results agree.
        """
        expected = self.apply(op)
        if op.kind is OpKind.range:
            actual = [tuple(e) for e in actual]
            expected = [tuple(e) for e in expected]
        if expected == actual:
            return True
        self.mismatches += 1
        pm.hook.on_oracle_mismatch(op_index=op_index, op=op, expected=expected, actual=actual)
        return False

    def check_contents(self, items: Iterable[tuple[int, int]]) -> bool:
        "Compare a full ascending scan of an index with the oracle."
        return [tuple(e) for e in items] == [tuple(e) for e in self.data.items()]
