# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
"""Model-accelerated internal nodes.

An internal node is a gap array of capacity f: `keys[i]` is the separator of
`children[i]`, and a slot whose child is `None` is dead (a never-used gap or a
tombstoned child). Dead slots keep a masked key so that the flag-cleared key
sequence is non-decreasing across *all* slots; routing is then a bounded
bisect followed by a skip to the first live slot. Children that cannot be
placed at their predicted slot go to a short append log.
"""

from __future__ import annotations

import math
import sys
from bisect import bisect_left
from typing import TYPE_CHECKING, Any

from hireindex.core import FLAG_BIT, LIVE_MASK, InvariantError, LogFullError
from hireindex.leaf import NODE_HEADER_BYTES, SLOT_BYTES, DeleteOutcome
from hireindex.plm import LinearModel, fit_least_squares, predict

if sys.version_info >= (3, 11):
    from enum import StrEnum
else:
    from backports.strenum import StrEnum

if TYPE_CHECKING:
    from collections.abc import Iterable

__all__ = ["InternalInsert", "InternalNode", "retrain_and_remap", "route"]

_live = LIVE_MASK.__and__


class InternalInsert(StrEnum):
    placed = "placed"
    logged = "logged"
    remapped = "remapped"
    split = "split"


class InternalNode:
    is_leaf = False
    __slots__ = (
        "__weakref__",
        "bound",
        "children",
        "cnt",
        "f",
        "keys",
        "log",
        "log_cap",
        "mls_log",
        "model",
        "retired",
        "under_retrain",
    )

    def __init__(self, f: int, log_cap: int | None = None):
        self.f = f
        self.log_cap = log_cap if log_cap is not None else math.ceil(0.1 * f)
        self.keys: list[int] = [FLAG_BIT] * f
        self.children: list[Any] = [None] * f
        self.model = LinearModel(0.0, 0.0, 0, 0)
        self.bound = 0
        self.log: list[tuple[int, Any]] = []
        self.cnt = 0
        self.under_retrain = False
        self.mls_log = None
        self.retired = False

    def __repr__(self):
        return f"<InternalNode cnt={self.cnt} log={len(self.log)} at {id(self):#x}>"

    @classmethod
    def build(cls, pairs: Iterable[tuple[int, Any]], f: int, log_cap: int | None = None) -> InternalNode:
        "A node holding `pairs` (ascending by separator), remapped over its full capacity."
        node = cls(f, log_cap)
        retrain_and_remap(node, list(pairs))
        return node

    # Slot helpers

    def _first_live_from(self, i: int) -> int:
        children = self.children
        n = len(children)
        while i < n and children[i] is None:
            i += 1
        return i

    def _live_left(self, i: int) -> int | None:
        "Separator of the nearest live slot left of i."
        children = self.children
        i -= 1
        while i >= 0:
            if children[i] is not None:
                return self.keys[i]
            i -= 1
        return None

    def _live_right(self, i: int) -> int | None:
        children = self.children
        i += 1
        while i < len(children):
            if children[i] is not None:
                return self.keys[i]
            i += 1
        return None

    def _refill(self, j: int, sep: int) -> None:
        "Adjust the dead slots around slot j so the flag-cleared keys stay non-decreasing."
        keys = self.keys
        children = self.children
        i = j - 1
        while i >= 0 and children[i] is None and keys[i] & LIVE_MASK > sep:
            keys[i] = sep | FLAG_BIT
            i -= 1
        i = j + 1
        while i < len(keys) and children[i] is None and keys[i] & LIVE_MASK < sep:
            keys[i] = sep | FLAG_BIT
            i += 1

    def _slot_of(self, child) -> int | None:
        try:
            return self.children.index(child)
        except ValueError:
            return None

    def _log_index(self, child) -> int | None:
        for i, (_, c) in enumerate(self.log):
            if c is child:
                return i
        return None

    # Queries

    def kp_candidate(self, k: int) -> int | None:
        "Slot of the smallest live K-P separator >= k, or None."
        keys = self.keys
        n = len(keys)
        if self.bound < self.f // 2:
            p = predict(self.model, k, n)
            lo = p - self.bound
            lo = lo if lo > 0 else 0
            hi = p + self.bound + 1
            hi = hi if hi < n else n
            i = bisect_left(keys, k, lo, hi, key=_live)
            if i == lo and lo and keys[lo - 1] & LIVE_MASK >= k:
                i = bisect_left(keys, k, 0, lo, key=_live)
        else:
            i = bisect_left(keys, k, key=_live)
        i = self._first_live_from(i)
        return i if i < n else None

    def log_candidate(self, k: int) -> tuple[int, Any] | None:
        best = None
        for entry in self.log:
            if entry[0] >= k and (best is None or entry[0] < best[0]):
                best = entry
        return best

    def rightmost(self) -> tuple[int, Any] | None:
        "The (separator, child) pair with the largest separator."
        best = None
        for i in range(len(self.children) - 1, -1, -1):
            if self.children[i] is not None:
                best = (self.keys[i], self.children[i])
                break
        for entry in self.log:
            if best is None or entry[0] > best[0]:
                best = entry
        return best

    def separator_of(self, child) -> int:
        j = self._slot_of(child)
        if j is not None:
            return self.keys[j]
        j = self._log_index(child)
        if j is not None:
            return self.log[j][0]
        msg = f"{child!r} is not a child of {self!r}"
        raise InvariantError(msg)

    def live_pairs(self) -> list[tuple[int, Any]]:
        "All live (separator, child) pairs in ascending separator order."
        kp = [(k, c) for k, c in zip(self.keys, self.children) if c is not None]
        if not self.log:
            return kp
        return sorted(kp + self.log, key=lambda e: e[0])

    def child_list(self) -> list[Any]:
        return [c for _, c in self.live_pairs()]

    def max_separator(self) -> int | None:
        top = self.rightmost()
        return None if top is None else top[0]

    # Updates

    def insert(self, sep: int, child, *, strict: bool = False) -> tuple[InternalInsert, InternalNode | None]:
        """Add a pushed-up child.

        Returns the outcome and, on a split, the new right node (whose
        separator is `sep`'s upper bound carried by the caller).
        """
        f = self.f
        p = predict(self.model, sep, f)
        if self.children[p] is None:
            left = self._live_left(p)
            right = self._live_right(p)
            if (left is None or left < sep) and (right is None or sep < right):
                self._refill(p, sep)
                self.keys[p] = sep
                self.children[p] = child
                self.cnt += 1
                if self.cnt > f:
                    return InternalInsert.split, self.split()
                return InternalInsert.placed, None
        if len(self.log) < self.log_cap:
            self.log.append((sep, child))
            self.cnt += 1
            if self.cnt > f:
                return InternalInsert.split, self.split()
            return InternalInsert.logged, None
        if strict and self.cnt + 1 <= f:
            msg = f"Log of {self!r} is full ({self.log_cap})"
            raise LogFullError(msg)
        pairs = self.live_pairs()
        pairs.append((sep, child))
        pairs.sort(key=lambda e: e[0])
        if len(pairs) > f:
            self.cnt = len(pairs)
            return InternalInsert.split, self.split(pairs)
        retrain_and_remap(self, pairs)
        return InternalInsert.remapped, None

    def split(self, pairs: list[tuple[int, Any]] | None = None) -> InternalNode:
        "Split at the live-child midpoint; self keeps the left half."
        pairs = self.live_pairs() if pairs is None else pairs
        mid = len(pairs) // 2
        right = InternalNode.build(pairs[mid:], self.f, self.log_cap)
        retrain_and_remap(self, pairs[:mid])
        return right

    def _remove_at(self, slot: int | None, log_index: int | None) -> DeleteOutcome:
        if slot is not None:
            self.children[slot] = None
            self.keys[slot] |= FLAG_BIT
        elif log_index is not None:
            self.log = self.log[:log_index] + self.log[log_index + 1 :]
        self.cnt -= 1
        if self.cnt < self.f // 2:
            return DeleteOutcome.underflow
        return DeleteOutcome.ok

    def delete(self, separator: int) -> DeleteOutcome:
        "Remove the child stored under `separator`."
        i = bisect_left(self.keys, separator, key=_live)
        while i < len(self.keys) and self.keys[i] & LIVE_MASK == separator:
            if self.children[i] is not None:
                return self._remove_at(i, None)
            i += 1
        for j, (s, _) in enumerate(self.log):
            if s == separator:
                return self._remove_at(None, j)
        msg = f"Separator {separator} not found in {self!r}"
        raise InvariantError(msg)

    def remove_child(self, child) -> DeleteOutcome:
        slot = self._slot_of(child)
        log_index = None if slot is not None else self._log_index(child)
        if slot is None and log_index is None:
            msg = f"{child!r} is not a child of {self!r}"
            raise InvariantError(msg)
        return self._remove_at(slot, log_index)

    def replace_separator(self, child, sep: int) -> None:
        """Give `child` a new separator in place.

        The caller keeps the separator between those of the neighbouring children.
        """
        j = self._slot_of(child)
        if j is not None:
            self._refill(j, sep)
            self.keys[j] = sep
            err = abs(predict(self.model, sep, self.f) - j)
            if err > self.bound:
                self.bound = err
            return
        j = self._log_index(child)
        if j is None:
            msg = f"{child!r} is not a child of {self!r}"
            raise InvariantError(msg)
        log = self.log.copy()
        log[j] = (sep, child)
        self.log = log

    def replace_child(self, old, new) -> None:
        "Point the entry of `old` at `new`, keeping its separator."
        j = self._slot_of(old)
        if j is not None:
            self.children[j] = new
            return
        j = self._log_index(old)
        if j is None:
            msg = f"{old!r} is not a child of {self!r}"
            raise InvariantError(msg)
        log = self.log.copy()
        log[j] = (log[j][0], new)
        self.log = log

    def snapshot(self) -> InternalNode:
        new = InternalNode(self.f, self.log_cap)
        new.keys = self.keys.copy()
        new.children = self.children.copy()
        new.model = self.model
        new.bound = self.bound
        new.log = self.log.copy()
        new.cnt = self.cnt
        return new

    def footprint(self) -> int:
        return NODE_HEADER_BYTES + SLOT_BYTES * (len(self.keys) + len(self.log))

    def clear(self):
        self.keys = []
        self.children = []
        self.log = []
        self.cnt = 0


def route(node: InternalNode, k: int):
    """The child whose separator is the tightest upper bound of `k`.

    Falls back to the rightmost child when every separator is below `k`.
    """
    slot = node.kp_candidate(k)
    logged = node.log_candidate(k) if node.log else None
    if slot is None:
        if logged is not None:
            return logged[1]
        return node.rightmost()[1]
    if logged is not None and logged[0] < node.keys[slot]:
        return logged[1]
    return node.children[slot]


def retrain_and_remap(node: InternalNode, pairs: list[tuple[int, Any]] | None = None) -> None:
    """Refit the routing model and lay the children out over the full array.

    The least-squares fit over (separator, rank) is stretched by f/cnt; each
    child goes to its predicted slot or, on a collision, the next free slot to
    the right. The log is emptied.
    """
    if pairs is None:
        pairs = node.live_pairs()
    f = node.f
    cnt = len(pairs)
    if cnt > f:
        msg = f"Cannot remap {cnt} children into {f} slots"
        raise InvariantError(msg)
    keys = [FLAG_BIT] * f
    children: list[Any] = [None] * f
    if not cnt:
        model = LinearModel(0.0, 0.0, 0, 0)
    else:
        fitted = fit_least_squares((sep, rank) for rank, (sep, _) in enumerate(pairs))
        model = fitted.scaled(f / cnt)
    bound = 0
    prev = -1
    last_sep = 0
    for i, (sep, child) in enumerate(pairs):
        p = predict(model, sep, f) if cnt else 0
        slot = max(p, prev + 1)
        slot = min(slot, f - (cnt - i))
        for gap in range(prev + 1, slot):
            keys[gap] = last_sep | FLAG_BIT
        keys[slot] = sep
        children[slot] = child
        bound = max(bound, abs(p - slot))
        prev = slot
        last_sep = sep
    for gap in range(prev + 1, f):
        keys[gap] = last_sep | FLAG_BIT
    model.epsilon = bound
    node.keys = keys
    node.children = children
    node.model = model
    node.bound = bound
    node.log = []
    node.cnt = cnt
