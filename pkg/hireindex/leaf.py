# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
"""The two leaf kinds.

`ModelLeaf` holds a compact sorted data array searched through a linear
model, tombstones for deleted data entries, and an unsorted append buffer
indexed by a hash table. `LegacyLeaf` is a B+-tree style sorted array with
in-place updates that keeps its regression factors current for the
transformation cost model. Both are linked into one sibling chain.
"""

from __future__ import annotations

import heapq
import sys
from bisect import bisect_left, bisect_right
from typing import TYPE_CHECKING

from hireindex.core import FLAG_BIT, LIVE_MASK, BufferFullError, Entry, InsertOutcome, chunk_evenly, mask_key
from hireindex.plm import ConeFitter, LinearModel, predict

if sys.version_info >= (3, 11):
    from enum import StrEnum
else:
    from backports.strenum import StrEnum

if TYPE_CHECKING:
    from collections.abc import Iterator

__all__ = [
    "NODE_HEADER_BYTES",
    "SLOT_BYTES",
    "DeleteOutcome",
    "LeafKind",
    "LeafStats",
    "LegacyLeaf",
    "ModelLeaf",
    "cone_extent",
    "cone_fit",
    "link_leaves",
    "pack_legacy",
    "segment_leaves",
]

NODE_HEADER_BYTES = 64
SLOT_BYTES = 16

_live = LIVE_MASK.__and__


class LeafKind(StrEnum):
    model = "model"
    legacy = "legacy"


class DeleteOutcome(StrEnum):
    absent = "absent"
    ok = "ok"
    underflow = "underflow"


class LeafStats:
    """Per-leaf observations for the cost model.

    `q_count` is Q_l, the queries seen in the current window; it restarts
    whenever the index's window id moves on.
    """

    __slots__ = ("q_count", "window_id")

    def __init__(self):
        self.q_count = 0
        self.window_id = 0

    def observe_query(self, window_id: int) -> int:
        if window_id != self.window_id:
            self.window_id = window_id
            self.q_count = 0
        self.q_count += 1
        return self.q_count

    def current(self, window_id: int) -> int:
        return self.q_count if window_id == self.window_id else 0


class _Leaf:
    is_leaf = True
    kind: LeafKind
    __slots__ = ("__weakref__", "mls_log", "next", "prev", "retired", "under_retrain")

    def _init_links(self):
        self.next: _Leaf | None = None
        self.prev: _Leaf | None = None
        self.under_retrain = False
        self.mls_log = None
        self.retired = False

    def clear(self):
        "Release the arrays of a reclaimed leaf."
        raise NotImplementedError


class ModelLeaf(_Leaf):
    kind = LeafKind.model
    __slots__ = (
        "bound",
        "buf_index",
        "buf_keys",
        "buf_values",
        "cnt",
        "cone",
        "keys",
        "model",
        "stats",
        "values",
    )

    def __init__(
        self,
        keys: list[int],
        values: list[int],
        model: LinearModel,
        bound: int | None = None,
        cone: ConeFitter | None = None,
    ):
        self._init_links()
        self.cone = cone
        self.keys = keys
        self.values = values
        self.model = model
        self.bound = int(model.epsilon if bound is None else bound)
        self.buf_keys: list[int] = []
        self.buf_values: list[int] = []
        self.buf_index: dict[int, int] = {}
        self.cnt = sum(1 for k in keys if not k & FLAG_BIT)
        self.stats = LeafStats()

    def __repr__(self):
        return f"<ModelLeaf n={len(self.keys)} buffer={len(self.buf_keys)} cnt={self.cnt} at {id(self):#x}>"

    @property
    def buffer_len(self) -> int:
        "B_l"
        return len(self.buf_keys)

    def position(self, k: int) -> int:
        """Lower-bound slot of `k` among the flag-cleared data keys.

        The search is confined to `bound` slots either side of the prediction.
        """
        keys = self.keys
        n = len(keys)
        if not n:
            return 0
        p = predict(self.model, k, n)
        lo = p - self.bound
        lo = lo if lo > 0 else 0
        hi = p + self.bound + 1
        hi = hi if hi < n else n
        i = bisect_left(keys, k, lo, hi, key=_live)
        if (i == lo and lo and keys[lo - 1] & LIVE_MASK >= k) or (i == hi and hi < n and keys[hi] & LIVE_MASK < k):
            # Model bound violated; fall back to the whole array.
            i = bisect_left(keys, k, key=_live)
        return i

    def lookup(self, k: int) -> int | None:
        i = self.position(k)
        if i < len(self.keys) and self.keys[i] == k:
            return self.values[i]
        j = self.buf_index.get(k)
        if j is not None:
            return self.buf_values[j]
        return None

    def find_data(self, k: int) -> int | None:
        i = self.position(k)
        if i < len(self.keys) and self.keys[i] == k:
            return self.values[i]
        return None

    def find_buffer(self, k: int) -> int | None:
        j = self.buf_index.get(k)
        return None if j is None else self.buf_values[j]

    def insert(self, k: int, v: int, tau: int) -> InsertOutcome:
        j = self.buf_index.get(k)
        if j is not None:
            self.buf_values[j] = v
            return InsertOutcome.updated
        keys = self.keys
        n = len(keys)
        i = self.position(k)
        if i < n and keys[i] == k:
            self.values[i] = v
            return InsertOutcome.updated
        if n:
            slot = predict(self.model, k, n)
            # Every key left of i is < k and every key right of i-1 is >= k,
            # so writing k into a tombstone at i or i-1 keeps the order. A
            # tombstone of k itself at i may only be revived in place.
            candidates = (i,) if i < n and keys[i] & LIVE_MASK == k else (i, i - 1)
            for j in candidates:
                if 0 <= j < n and keys[j] & FLAG_BIT and abs(slot - j) <= self.bound:
                    keys[j] = k
                    self.values[j] = v
                    self.cnt += 1
                    return InsertOutcome.reused_slot
        if len(self.buf_keys) >= tau:
            msg = f"Buffer of {self!r} is full (tau={tau}) and nothing recalibrated it"
            raise BufferFullError(msg)
        self.buf_keys.append(k)
        self.buf_values.append(v)
        self.buf_index[k] = len(self.buf_keys) - 1
        self.cnt += 1
        if len(self.buf_keys) >= tau:
            return InsertOutcome.buffered_and_trigger
        return InsertOutcome.buffered

    def delete(self, k: int) -> bool:
        j = self.buf_index.pop(k, None)
        if j is not None:
            last = len(self.buf_keys) - 1
            if j != last:
                k_last = self.buf_keys[last]
                self.buf_keys[j] = k_last
                self.buf_values[j] = self.buf_values[last]
                self.buf_index[k_last] = j
            self.buf_keys.pop()
            self.buf_values.pop()
            self.cnt -= 1
            return True
        i = self.position(k)
        if i < len(self.keys) and self.keys[i] == k:
            self.keys[i] = mask_key(k)
            self.cnt -= 1
            return True
        return False

    def last_live_key(self) -> int | None:
        keys = self.keys
        last = None
        for i in range(len(keys) - 1, -1, -1):
            if not keys[i] & FLAG_BIT:
                last = keys[i]
                break
        if self.buf_keys:
            top = max(self.buf_keys)
            if last is None or top > last:
                last = top
        return last

    def first_live_key(self) -> int | None:
        first = next((k for k in self.keys if not k & FLAG_BIT), None)
        if self.buf_keys:
            low = min(self.buf_keys)
            if first is None or low < first:
                first = low
        return first

    def scan_data(self, lo: int, hi: int) -> list[Entry]:
        keys = self.keys
        values = self.values
        n = len(keys)
        i = self.position(lo)
        data = []
        while i < n:
            k = keys[i]
            if k & LIVE_MASK > hi:
                break
            if not k & FLAG_BIT:
                data.append(Entry(k, values[i]))
            i += 1
        return data

    def scan_buffer(self, lo: int, hi: int) -> list[Entry]:
        "Buffered entries in [lo, hi], sorted."
        return sorted(Entry(k, v) for k, v in zip(self.buf_keys, self.buf_values) if lo <= k <= hi)

    def scan(self, lo: int, hi: int) -> tuple[list[Entry], bool]:
        """Live entries in [lo, hi], ascending, and whether the range continues past this leaf."""
        data = self.scan_data(lo, hi)
        if self.buf_keys:
            extra = self.scan_buffer(lo, hi)
            if extra:
                data = list(heapq.merge(data, extra))
        last = self.last_live_key()
        return data, last is None or hi > last

    def live_items(self) -> list[Entry]:
        "Sort-merge of the live data entries and the buffer; tombstones dropped."
        data = [Entry(k, v) for k, v in zip(self.keys, self.values) if not k & FLAG_BIT]
        if self.buf_keys:
            return list(heapq.merge(data, sorted(Entry(k, v) for k, v in zip(self.buf_keys, self.buf_values))))
        return data

    def __iter__(self) -> Iterator[Entry]:
        return iter(self.live_items())

    def residual_violations(self, epsilon: int) -> list[int]:
        "Live data keys whose slot is further than `epsilon` from the prediction."
        n = len(self.keys)
        m = self.model
        return [k for i, k in enumerate(self.keys) if not k & FLAG_BIT and abs(predict(m, k, n) - i) > epsilon]

    def extension_cone(self, epsilon: int) -> ConeFitter | None:
        """A private copy of the fitter behind the model, ready to take more slots.

        Leaves built without one refit their data slots; None if those slots
        no longer fit a single cone.
        """
        if self.cone is not None and self.cone.epsilon == epsilon:
            return self.cone.copy()
        end, fitter = cone_fit([k & LIVE_MASK for k in self.keys], 0, epsilon, len(self.keys))
        return fitter if end == len(self.keys) else None

    def snapshot(self) -> ModelLeaf:
        new = ModelLeaf(self.keys.copy(), self.values.copy(), self.model, self.bound, self.cone)
        new.buf_keys = self.buf_keys.copy()
        new.buf_values = self.buf_values.copy()
        new.buf_index = self.buf_index.copy()
        new.cnt = self.cnt
        return new

    def footprint(self) -> int:
        return NODE_HEADER_BYTES + SLOT_BYTES * (len(self.keys) + len(self.buf_keys))

    def clear(self):
        self.keys = []
        self.values = []
        self.buf_keys = []
        self.buf_values = []
        self.buf_index = {}
        self.cnt = 0
        self.cone = None


class LegacyLeaf(_Leaf):
    """Sorted array leaf of capacity f.

    The running sums Σk and Σk² are exact integers updated in O(1) per write.
    One insert shifts the rank of every larger key, so Σk·r (r = position)
    is only marked stale by a write and rebuilt when the regression is read.
    """

    kind = LeafKind.legacy
    __slots__ = ("_sum_kr", "keys", "sum_k", "sum_kk", "values")

    def __init__(self, keys: list[int] | None = None, values: list[int] | None = None):
        self._init_links()
        self.keys = keys if keys is not None else []
        self.values = values if values is not None else []
        self._recount()

    def __repr__(self):
        return f"<LegacyLeaf cnt={len(self.keys)} at {id(self):#x}>"

    def _recount(self):
        keys = self.keys
        self.sum_k = sum(keys)
        self.sum_kk = sum(k * k for k in keys)
        self._sum_kr = None

    @property
    def sum_kr(self) -> int:
        if self._sum_kr is None:
            self._sum_kr = sum(k * r for r, k in enumerate(self.keys))
        return self._sum_kr

    @property
    def cnt(self) -> int:
        return len(self.keys)

    def lookup(self, k: int) -> int | None:
        keys = self.keys
        i = bisect_left(keys, k)
        if i < len(keys) and keys[i] == k:
            return self.values[i]
        return None

    def insert(self, k: int, v: int, f: int) -> LegacyLeaf | None:
        """Insert in place; return the new right sibling if the leaf overflowed f."""
        keys = self.keys
        i = bisect_left(keys, k)
        if i < len(keys) and keys[i] == k:
            self.values[i] = v
            return None
        self._sum_kr = None
        self.sum_k += k
        self.sum_kk += k * k
        keys.insert(i, k)
        self.values.insert(i, v)
        if len(keys) > f:
            return self.split()
        return None

    def split(self) -> LegacyLeaf:
        mid = len(self.keys) // 2
        right = LegacyLeaf(self.keys[mid:], self.values[mid:])
        del self.keys[mid:]
        del self.values[mid:]
        self._recount()
        return right

    def delete(self, k: int, f: int) -> DeleteOutcome:
        keys = self.keys
        i = bisect_left(keys, k)
        if i >= len(keys) or keys[i] != k:
            return DeleteOutcome.absent
        del keys[i]
        del self.values[i]
        self._sum_kr = None
        self.sum_k -= k
        self.sum_kk -= k * k
        if len(keys) < f // 2:
            return DeleteOutcome.underflow
        return DeleteOutcome.ok

    def scan(self, lo: int, hi: int) -> tuple[list[Entry], bool]:
        keys = self.keys
        i = bisect_left(keys, lo)
        j = bisect_right(keys, hi, i)
        out = [Entry(keys[x], self.values[x]) for x in range(i, j)]
        return out, not keys or hi > keys[-1]

    def live_items(self) -> list[Entry]:
        return [Entry(k, v) for k, v in zip(self.keys, self.values)]

    def __iter__(self) -> Iterator[Entry]:
        return iter(self.live_items())

    def first_live_key(self) -> int | None:
        return self.keys[0] if self.keys else None

    def last_live_key(self) -> int | None:
        return self.keys[-1] if self.keys else None

    def regression(self) -> LinearModel:
        """Least-squares key→rank line of the current contents, origin at the first key."""
        n = len(self.keys)
        if not n:
            return LinearModel(0.0, 0.0, None, 0)
        origin = self.keys[0]
        if n == 1:
            return LinearModel(0.0, 0.0, None, origin)
        sum_r = n * (n - 1) // 2
        denom = n * self.sum_kk - self.sum_k * self.sum_k
        slope = (n * self.sum_kr - self.sum_k * sum_r) / denom if denom else 0.0
        intercept = (sum_r - slope * (self.sum_k - n * origin)) / n
        return LinearModel(slope, intercept, None, origin)

    def absorb_left(self, left: LegacyLeaf) -> None:
        "Prepend the entries of the left neighbour; the left leaf is then discarded by the caller."
        self.keys[:0] = left.keys
        self.values[:0] = left.values
        self._recount()

    def redistribute(self, right: LegacyLeaf) -> None:
        "Even out the entry counts of self and its right neighbour."
        keys = self.keys + right.keys
        values = self.values + right.values
        mid = len(keys) // 2
        self.keys, right.keys = keys[:mid], keys[mid:]
        self.values, right.values = values[:mid], values[mid:]
        self._recount()
        right._recount()

    def snapshot(self) -> LegacyLeaf:
        return LegacyLeaf(self.keys.copy(), self.values.copy())

    def footprint(self) -> int:
        return NODE_HEADER_BYTES + SLOT_BYTES * len(self.keys)

    def clear(self):
        self.keys = []
        self.values = []
        self._recount()


def cone_fit(keys: list[int], start: int, epsilon: int, limit: int) -> tuple[int, ConeFitter]:
    """Greedily extend a cone fit from `start`; return the end index and the fitter.

    At most `limit` entries are taken even when the fit would keep holding.
    """
    fitter = ConeFitter(epsilon)
    end = start
    stop = min(len(keys), start + limit)
    while end < stop and fitter.add_point(keys[end], end - start):
        end += 1
    return end, fitter


def cone_extent(keys: list[int], start: int, epsilon: int, limit: int) -> tuple[int, LinearModel]:
    "Like `cone_fit`, returning the fitted model."
    end, fitter = cone_fit(keys, start, epsilon, limit)
    return end, fitter.current_model()


def pack_legacy(keys: list[int], values: list[int], f: int) -> list[LegacyLeaf]:
    "Repack sorted entries into ceil(n / f) legacy leaves of near-equal size."
    leaves = []
    start = 0
    for chunk in chunk_evenly(keys, f):
        end = start + len(chunk)
        leaves.append(LegacyLeaf(chunk, values[start:end]))
        start = end
    return leaves


def segment_leaves(
    keys: list[int], values: list[int], *, epsilon: int, alpha: int, beta: int, f: int, legacy: bool = True
) -> list[ModelLeaf | LegacyLeaf]:
    """Partition sorted entries into new leaves.

    Cone segments hold at most `beta` entries. Consecutive segments shorter
    than `alpha` are pooled into legacy leaves unless `legacy` is False.
    """
    out: list[ModelLeaf | LegacyLeaf] = []
    pool = 0
    start = 0
    n = len(keys)
    while start < n:
        end, cone = cone_fit(keys, start, epsilon, beta)
        if legacy and end - start < alpha:
            start = end
            continue
        if pool < start and legacy:
            out.extend(pack_legacy(keys[pool:start], values[pool:start], f))
        out.append(ModelLeaf(keys[start:end], values[start:end], cone.current_model(), epsilon, cone))
        start = pool = end
    if pool < n:
        out.extend(pack_legacy(keys[pool:n], values[pool:n], f))
    link_leaves(out)
    return out


def link_leaves(leaves: list) -> None:
    "Chain `leaves` together in list order."
    for left, right in zip(leaves, leaves[1:]):
        left.next = right
        right.prev = left
