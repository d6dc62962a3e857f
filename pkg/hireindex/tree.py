# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
"""The HIRE index.

A balanced tree of model-accelerated internal nodes over a sibling-chained
layer of model leaves and legacy leaves. One foreground thread mutates the
index under the writer lock. Readers never lock: the grace period keeps
retired nodes intact while they may still be read, and the write sequence
makes a reader retry whenever an in-place mutation overlapped it.
Recalibration runs on the engine's background worker.
"""

from __future__ import annotations

import itertools
import threading
import time
from typing import TYPE_CHECKING, Any

from traitlets import Instance, default
from traitlets.config import LoggingConfigurable

from hireindex.core import (
    KEY_MAX,
    BufferFullError,
    Entry,
    IndexParams,
    InsertOutcome,
    KeyDomainError,
    NonIncreasingKeyError,
    check_key,
    chunk_evenly,
)
from hireindex.epoch import GracePeriod, WriteSequence
from hireindex.internal import InternalNode, retrain_and_remap, route
from hireindex.leaf import DeleteOutcome, LeafKind, LegacyLeaf, ModelLeaf, cone_fit, link_leaves, pack_legacy
from hireindex.plm import RlsState, rls_update
from hireindex.recalibration import JobKind, LogOp, MlsLog, Observation, RecalibrationEngine, Trigger

if TYPE_CHECKING:
    from collections.abc import Iterable, Iterator

__all__ = ["AuditReport", "BulkLoader", "HireIndex", "bulk_load"]


class AuditReport:
    "Outcome of `HireIndex.audit`."

    __slots__ = ("checked", "violations")

    def __init__(self):
        self.violations: list[str] = []
        self.checked = dict.fromkeys(("leaves", "internal", "entries"), 0)

    def __repr__(self):
        return f"<AuditReport ok={self.ok} violations={len(self.violations)} {self.checked}>"

    @property
    def ok(self) -> bool:
        return not self.violations

    def add(self, msg: str) -> None:
        self.violations.append(msg)


class HireIndex(LoggingConfigurable):
    """Hybrid learned index with non-blocking recalibration.

    Usage:

    ``` python
    with HireIndex.bulk_load(zip(keys, values), f=256) as index:
        index.insert(42, 1)
        index.get(42)
        index.range(0, 1000, limit=256)
    ```
    """

    params = Instance(IndexParams)

    @default("params")
    def _default_params(self):
        return IndexParams(parent=self)

    def __init__(self, params: IndexParams | None = None, **kwargs):
        traits = {k: kwargs.pop(k) for k in list(kwargs) if k in {"parent", "config", "log"}}
        if params is None:
            params = IndexParams(**kwargs)
        elif kwargs:
            msg = f"Pass either params or keyword parameters, not both ({sorted(kwargs)})"
            raise TypeError(msg)
        super().__init__(params=params, **traits)
        self._f = params.f
        self._tau = params.tau
        self._alpha = params.alpha
        self._beta = params.beta
        self._epsilon = params.epsilon
        self._window = params.cost.window_ops
        self._sample_every = params.cost.timing_sample_every
        self._convert = not params.disable_legacy_leaves
        self.root: Any = None
        self.head: Any = None
        self.height = 0
        self._count = 0
        self._max_key = -1
        self._lock = threading.RLock()
        self._ops = itertools.count()
        self._active_logs: dict[int, MlsLog] = {}
        self.grace = GracePeriod()
        self.seq = WriteSequence()
        self.metrics = dict.fromkeys(
            (
                "gets",
                "ranges",
                "inserts",
                "deletes",
                "logged",
                "buffer_ops",
                "buffer_touches",
                "leaf_splits",
                "leaf_merges",
                "redistributions",
                "internal_merges",
            ),
            0,
        )
        self.engine = RecalibrationEngine(self)

    def __repr__(self):
        return f"<HireIndex n={self._count} height={self.height} f={self._f}>"

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __len__(self):
        return self._count

    def __contains__(self, k: int):
        return self.get(k) is not None

    @classmethod
    def bulk_load(
        cls, pairs: Iterable[tuple[int, int]], params: IndexParams | None = None, **kwargs
    ) -> HireIndex:
        """Build an index over ascending (key, value) pairs in linear time."""
        index = cls(params, **kwargs)
        keys: list[int] = []
        values: list[int] = []
        for k, v in pairs:
            keys.append(k)
            values.append(v)
        start = time.perf_counter()
        BulkLoader(index.params).load(index, keys, values)
        index.log.info(
            "Bulk loaded %d keys in %.3fs: height=%d leaves=%d",
            len(keys),
            time.perf_counter() - start,
            index.height,
            sum(1 for _ in index.leaves()),
        )
        return index

    # Descent helpers

    def _descend(self, k: int, bypass: MlsLog | None) -> tuple[list, MlsLog | None]:
        """Root-to-leaf path for `k`.

        Stops at the first node owned by a recalibration job (other than
        `bypass`) and returns that job's log.
        """
        path = []
        node = self.root
        while True:
            log = node.mls_log
            if log is not None and log is not bypass:
                return path, log
            path.append(node)
            if node.is_leaf:
                return path, None
            node = route(node, k)

    def _find_path(self, target, hint: int | None) -> list | None:
        "Root-to-`target` path, found by routing `hint` or else by a full traversal."
        root = self.root
        if root is None:
            return None
        if hint is not None:
            path = []
            node = root
            while True:
                path.append(node)
                if node is target:
                    return path
                if node.is_leaf:
                    break
                node = route(node, hint)
        stack = [[root]]
        while stack:
            path = stack.pop()
            node = path[-1]
            if node is target:
                return path
            if not node.is_leaf:
                stack.extend([*path, child] for child in node.child_list())
        return None

    def _lookup(self, k: int, op: int | None = None) -> tuple[int | None, Any]:
        """(value, leaf) for `k` with the newest pending update overlaid.

        With an operation number the lookup also counts as a query: timings
        are sampled and the leaf's query statistics are updated.
        """
        node = self.root
        if node is None:
            return None, None
        newest = None
        while True:
            log = node.mls_log
            if log is not None:
                hit = log.latest.get(k)
                if hit is not None and (newest is None or hit[0] > newest[0]):
                    newest = hit
            if node.is_leaf:
                break
            node = route(node, k)
        if op is None or node.kind is not LeafKind.model:
            value = node.lookup(k)
        else:
            if op % self._sample_every:
                value = node.find_data(k)
            else:
                start = time.perf_counter_ns()
                value = node.find_data(k)
                self.engine.record_observation(Observation.model_search, time.perf_counter_ns() - start)
            if value is None and node.buf_keys:
                self.metrics["buffer_ops"] += 1
                self.metrics["buffer_touches"] += 1
                value = node.find_buffer(k)
            if node.mls_log is None:
                self._observe_query(node, op, k)
        if newest is not None:
            return (newest[2] if newest[1] is LogOp.insert else None), node
        return value, node

    # Reads

    def get(self, k: int) -> int | None:
        check_key(k)
        op = next(self._ops)
        self.metrics["gets"] += 1
        with self.grace.reader():
            return self.seq.read(lambda: self._lookup(k, op)[0])

    def _observe_query(self, leaf: ModelLeaf, op: int, k: int) -> None:
        window_id = op // self._window
        q = leaf.stats.observe_query(window_id)
        cm = self.engine.cost
        if len(leaf.buf_keys) >= cm.b_th and q >= cm.q_th:
            self.engine.check_leaf(leaf, window_id, k, reader=True)

    def range(self, lo: int, hi: int, limit: int | None = None) -> list[Entry]:
        """Live entries with lo <= key <= hi in ascending order, at most `limit` of them."""
        if lo > hi:
            msg = f"Empty range: lo={lo} > hi={hi}"
            raise ValueError(msg)
        check_key(lo)
        hi = min(hi, KEY_MAX)
        op = next(self._ops)
        self.metrics["ranges"] += 1
        with self.grace.reader():
            return self.seq.read(lambda: self._range(lo, hi, limit, op))

    def _range(self, lo: int, hi: int, limit: int | None, op: int) -> list[Entry]:
        node = self.root
        if node is None:
            return []
        logs = list(self._active_logs.values())
        while not node.is_leaf:
            node = route(node, lo)
        overlay: dict[int, tuple] = {}
        for log in logs:
            for k, hit in list(log.latest.items()):
                if lo <= k <= hi and (k not in overlay or hit[0] > overlay[k][0]):
                    overlay[k] = hit
        need = None
        if limit is not None:
            need = limit + sum(1 for hit in overlay.values() if hit[1] is LogOp.delete)
        out: list[Entry] = []
        exhausted = True
        sample = not op % self._sample_every
        while node is not None:
            if node.kind is LeafKind.model:
                entries, cont = self._scan_model(node, lo, hi, op, sample)
                sample = False
            else:
                entries, cont = node.scan(lo, hi)
            out.extend(entries)
            if need is not None and len(out) >= need:
                exhausted = False
                break
            if not cont:
                break
            node = node.next
        if overlay:
            if not exhausted:
                out = out[:need]
            bound = hi if exhausted else out[-1].key
            merged = dict(out)
            for k, (_, op_kind, v) in overlay.items():
                if k <= bound:
                    if op_kind is LogOp.insert:
                        merged[k] = v
                    else:
                        merged.pop(k, None)
            out = [Entry(k, merged[k]) for k in sorted(merged)]
        if limit is not None:
            del out[limit:]
        return out

    def _scan_model(self, leaf: ModelLeaf, lo: int, hi: int, op: int, sample: bool) -> tuple[list[Entry], bool]:
        if leaf.buf_keys:
            self.metrics["buffer_ops"] += 1
            self.metrics["buffer_touches"] += 1
        if sample and leaf.buf_keys:
            start = time.perf_counter_ns()
            leaf.position(lo)
            mid = time.perf_counter_ns()
            leaf.scan_buffer(lo, hi)
            end = time.perf_counter_ns()
            self.engine.record_observation(Observation.model_search, mid - start)
            self.engine.record_observation(Observation.buffer_scan, end - mid, len(leaf.buf_keys))
        result = leaf.scan(lo, hi)
        if leaf.mls_log is None:
            self._observe_query(leaf, op, lo)
        return result

    def items(self) -> list[Entry]:
        "Every live entry in ascending key order."
        return self.range(0, KEY_MAX)

    def leaves(self) -> Iterator:
        "Walk the sibling chain from the leftmost leaf."
        node = self.head
        while node is not None:
            yield node
            node = node.next

    def nodes(self) -> Iterator:
        "Depth-first walk over every reachable node."
        if self.root is None:
            return
        stack = [self.root]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.extend(reversed(node.child_list()))

    # Writes

    def insert(self, k: int, v: int) -> None:
        check_key(k)
        next(self._ops)
        with self._lock, self.seq.write():
            self.metrics["inserts"] += 1
            if self._insert(k, v, None):
                self._count += 1

    def delete(self, k: int) -> bool:
        check_key(k)
        next(self._ops)
        with self._lock, self.seq.write():
            self.metrics["deletes"] += 1
            deleted = self._delete(k, None)
            if deleted:
                self._count -= 1
            return deleted

    def _apply(self, op: LogOp, k: int, v: int | None, bypass: MlsLog) -> None:
        if op is LogOp.insert:
            self._insert(k, v, bypass)
        else:
            self._delete(k, bypass)

    def _insert(self, k: int, v: int, bypass: MlsLog | None) -> bool:
        "Apply an upsert; return True when `k` was not present before."
        if self.root is None:
            leaf = LegacyLeaf([k], [v])
            self.root = self.head = leaf
            self.height = 1
            self._max_key = k
            return True
        path, log = self._descend(k, bypass)
        if log is not None:
            existed = self._lookup(k)[0] is not None
            log.append(LogOp.insert, k, v)
            self.metrics["logged"] += 1
            return not existed
        leaf = path[-1]
        if k > self._max_key:
            for parent, child in zip(path, path[1:]):
                parent.replace_separator(child, k)
            self._max_key = k
        if leaf.kind is LeafKind.model:
            try:
                outcome = leaf.insert(k, v, self._tau)
            except BufferFullError:
                if not self.engine.request(JobKind.retrain, [leaf], k, Trigger.passive):
                    raise
                return self._insert(k, v, bypass)
            if outcome is InsertOutcome.buffered or outcome is InsertOutcome.buffered_and_trigger:
                self.metrics["buffer_ops"] += 1
                self.metrics["buffer_touches"] += 1
            if outcome is InsertOutcome.buffered_and_trigger or leaf.cnt > self._beta:
                self.engine.check_leaf(leaf, next(self._ops) // self._window, k, reader=False)
            return outcome is not InsertOutcome.updated
        before = leaf.cnt
        right = leaf.insert(k, v, self._f)
        if right is None:
            return leaf.cnt != before
        self._split_leaf(path, leaf, right)
        path = self._find_path(leaf, leaf.keys[0])
        if path is not None:
            self.engine.consider_legacy(path, leaf)
        return True

    def _split_leaf(self, path: list, leaf: LegacyLeaf, right: LegacyLeaf) -> None:
        self.metrics["leaf_splits"] += 1
        right.next = leaf.next
        right.prev = leaf
        if leaf.next is not None:
            leaf.next.prev = right
        leaf.next = right
        self._push_up(path[:-1], leaf, leaf.keys[-1], right)

    def _push_up(self, ancestors: list, left, left_max: int, right) -> None:
        "Hang `right` next to `left`, whose subtree now ends at `left_max`."
        if not ancestors:
            right_max = right.last_live_key() if right.is_leaf else right.max_separator()
            self.root = InternalNode.build([(left_max, left), (right_max, right)], self._f, self.params.log_cap)
            self.height += 1
            self._refresh_max_key()
            return
        parent = ancestors[-1]
        s_orig = parent.separator_of(left)
        parent.replace_separator(left, left_max)
        _, new_right = parent.insert(s_orig, right)
        if new_right is not None:
            self._push_up(ancestors[:-1], parent, parent.max_separator(), new_right)

    def _delete(self, k: int, bypass: MlsLog | None) -> bool:
        if self.root is None:
            return False
        path, log = self._descend(k, bypass)
        if log is not None:
            existed = self._lookup(k)[0] is not None
            if existed:
                log.append(LogOp.delete, k)
                self.metrics["logged"] += 1
            return existed
        leaf = path[-1]
        if leaf.kind is LeafKind.model:
            buffered = k in leaf.buf_index
            deleted = leaf.delete(k)
            if buffered:
                self.metrics["buffer_ops"] += 1
                self.metrics["buffer_touches"] += 2
            if deleted and self._convert and leaf.cnt < self._alpha:
                self.engine.request(JobKind.convert_to_legacy, [leaf], k)
            return deleted
        outcome = leaf.delete(k, self._f)
        if outcome is DeleteOutcome.underflow:
            survivor = self._rebalance_leaf(path)
            if survivor is not None and not survivor.retired and survivor.keys:
                path = self._find_path(survivor, survivor.keys[0])
                if path is not None:
                    self.engine.consider_legacy(path, survivor)
        return outcome is not DeleteOutcome.absent

    # Rebalancing

    def _unlink_leaf(self, leaf) -> None:
        prev, nxt = leaf.prev, leaf.next
        if prev is not None:
            prev.next = nxt
        if nxt is not None:
            nxt.prev = prev
        if self.head is leaf:
            self.head = nxt

    def _rebalance_leaf(self, path: list) -> LegacyLeaf | None:
        """Merge or redistribute an underfull legacy leaf with a legacy sibling under the same parent.

        Returns the leaf that holds the underfull leaf's entries afterwards.
        """
        leaf = path[-1]
        if len(path) < 2:
            return leaf
        parent = path[-2]
        children = parent.child_list()
        i = next(j for j, c in enumerate(children) if c is leaf)
        f = self._f
        right = children[i + 1] if i + 1 < len(children) else None
        left = children[i - 1] if i else None
        if self._legacy_sibling(right):
            if leaf.cnt + right.cnt <= f:
                right.absorb_left(leaf)
                self._unlink_leaf(leaf)
                parent.remove_child(leaf)
                self.grace.retire([leaf])
                self.metrics["leaf_merges"] += 1
                survivor = right
            else:
                leaf.redistribute(right)
                parent.replace_separator(leaf, leaf.keys[-1])
                self.metrics["redistributions"] += 1
                survivor = leaf
        elif self._legacy_sibling(left):
            if left.cnt + leaf.cnt <= f:
                leaf.absorb_left(left)
                self._unlink_leaf(left)
                parent.remove_child(left)
                self.grace.retire([left])
                self.metrics["leaf_merges"] += 1
            else:
                left.redistribute(leaf)
                parent.replace_separator(left, left.keys[-1])
                self.metrics["redistributions"] += 1
            survivor = leaf
        else:
            return leaf
        if parent.cnt < f // 2:
            self._rebalance_internal(path[:-1])
        return survivor

    def _legacy_sibling(self, node) -> bool:
        return node is not None and node.kind is LeafKind.legacy and self.engine._is_free(node)

    def _rebalance_internal(self, path: list) -> None:
        node = path[-1]
        if len(path) < 2:
            self._collapse_root()
            return
        parent = path[-2]
        children = parent.child_list()
        i = next(j for j, c in enumerate(children) if c is node)
        f = self._f
        right = children[i + 1] if i + 1 < len(children) else None
        left = children[i - 1] if i else None
        if right is not None and self.engine._is_free(right):
            pairs = node.live_pairs() + right.live_pairs()
            if len(pairs) <= f:
                retrain_and_remap(right, pairs)
                parent.remove_child(node)
                self.grace.retire([node])
                self.metrics["internal_merges"] += 1
            else:
                mid = len(pairs) // 2
                retrain_and_remap(node, pairs[:mid])
                retrain_and_remap(right, pairs[mid:])
                parent.replace_separator(node, pairs[mid - 1][0])
        elif left is not None and self.engine._is_free(left):
            pairs = left.live_pairs() + node.live_pairs()
            if len(pairs) <= f:
                retrain_and_remap(node, pairs)
                parent.remove_child(left)
                self.grace.retire([left])
                self.metrics["internal_merges"] += 1
            else:
                mid = len(pairs) // 2
                retrain_and_remap(left, pairs[:mid])
                retrain_and_remap(node, pairs[mid:])
                parent.replace_separator(left, pairs[mid - 1][0])
        else:
            return
        if parent.cnt < f // 2:
            self._rebalance_internal(path[:-1])

    def _collapse_root(self) -> None:
        root = self.root
        while root is not None and not root.is_leaf and root.cnt == 1 and root.mls_log is None:
            child = root.live_pairs()[0][1]
            self.grace.retire([root])
            self.root = root = child
            self.height -= 1
        self._refresh_max_key()

    def _set_root_from(self, top: list[tuple[int, Any]]) -> None:
        "Install the replacement of the whole tree, growing levels while more than one node remains."
        if not top:
            self.root = self.head = None
            self.height = 0
            return
        while len(top) > 1:
            top = [
                (chunk[-1][0], InternalNode.build(chunk, self._f, self.params.log_cap))
                for chunk in chunk_evenly(top, self._f)
            ]
        self.root = top[0][1]
        self.height = self._measure_height()
        self._refresh_max_key()

    def _refresh_max_key(self) -> None:
        "Track the smallest separator on the rightmost spine; keys above it must raise the spine."
        low = None
        node = self.root
        while node is not None and not node.is_leaf:
            top = node.rightmost()
            if top is None:
                break
            sep, node = top
            if low is None or sep < low:
                low = sep
        self._max_key = -1 if low is None else low

    def _measure_height(self) -> int:
        height = 0
        node = self.root
        while node is not None:
            height += 1
            node = None if node.is_leaf else node.live_pairs()[0][1]
        return height

    # Maintenance

    def quiesce(self, timeout: float | None = None) -> bool:
        "Wait for every queued recalibration to be published and reclaim retired nodes."
        return self.engine.quiesce(timeout)

    def close(self) -> None:
        self.engine.close()

    def force_retrain_all(self) -> int:
        "Request a retrain of every model leaf; return how many were requested."
        count = 0
        with self._lock:
            for leaf in list(self.leaves()):
                if leaf.kind is LeafKind.model and leaf.mls_log is None and not leaf.retired:
                    count += self.engine.request(JobKind.retrain, [leaf], leaf.first_live_key(), Trigger.passive)
        return count

    def model_error_violations(self) -> list[tuple[ModelLeaf, int]]:
        "(leaf, key) for every live data entry further than epsilon from its predicted slot."
        out = []
        for leaf in self.leaves():
            if leaf.kind is LeafKind.model:
                out.extend((leaf, k) for k in leaf.residual_violations(self._epsilon))
        return out

    def memory_bytes(self) -> int:
        "Structural bytes: 16 per stored entry or slot plus a fixed header per node."
        return sum(node.footprint() for node in self.nodes())

    def stats(self) -> dict:
        model = legacy = internal = buffered = 0
        for node in self.nodes():
            if not node.is_leaf:
                internal += 1
            elif node.kind is LeafKind.model:
                model += 1
                buffered += len(node.buf_keys)
            else:
                legacy += 1
        ops = self.metrics["buffer_ops"]
        return {
            "size": self._count,
            "height": self.height,
            "model_leaves": model,
            "legacy_leaves": legacy,
            "internal_nodes": internal,
            "buffered_entries": buffered,
            "memory_bytes": self.memory_bytes(),
            "mean_buffer_touches": self.metrics["buffer_touches"] / ops if ops else 0.0,
            "retired_pending": self.grace.pending,
            "read_retries": self.seq.retries,
            "metrics": dict(self.metrics),
            "engine": self.engine.stats(),
            "params": self.params.describe(),
        }

    def audit(self, *, sizes: bool = True) -> AuditReport:
        """Check the structural invariants. Meant for a quiesced index.

        With `sizes`, model leaves must also hold between alpha and beta live entries.
        """
        report = AuditReport()
        if self.root is None:
            if self.head is not None:
                report.add("empty tree with a non-empty sibling chain")
            return report
        params = self.params
        seen: set[int] = set()
        leaf_depths: set[int] = set()
        dfs_leaves: list = []

        def visit(node, depth: int) -> int | None:
            "Audit `node`; return the largest live key below it."
            if id(node) in seen:
                report.add(f"{node!r} is reachable twice")
                return None
            seen.add(id(node))
            if node.mls_log is not None:
                report.add(f"{node!r} is still owned by a recalibration job")
            if node.is_leaf:
                leaf_depths.add(depth)
                dfs_leaves.append(node)
                self._audit_leaf(node, report, sizes=sizes)
                return node.last_live_key()
            report.checked["internal"] += 1
            if len(node.log) > node.log_cap:
                report.add(f"{node!r} log holds {len(node.log)} > {node.log_cap}")
            pairs = node.live_pairs()
            if node.cnt != len(pairs):
                report.add(f"{node!r} counts {node.cnt} children but holds {len(pairs)}")
            if node.cnt > params.f:
                report.add(f"{node!r} holds {node.cnt} > f children")
            if not pairs:
                report.add(f"{node!r} has no children")
            live = [k for k, c in zip(node.keys, node.children) if c is not None]
            cleared = [k & KEY_MAX for k in node.keys]
            # One ordering fault per node.
            if any(a >= b for a, b in zip(live, live[1:])):
                report.add(f"{node!r} separators are out of order")
            elif any(a > b for a, b in zip(cleared, cleared[1:])):
                report.add(f"{node!r} gap fill breaks the slot order")
            elif any(a >= b for (a, _), (b, _) in zip(pairs, pairs[1:])):
                report.add(f"{node!r} separators collide")
            top = None
            for sep, child in pairs:
                high = visit(child, depth + 1)
                if high is not None and high > sep:
                    report.add(f"{child!r} holds key {high} above its separator {sep}")
                if high is not None and (top is None or high > top):
                    top = high
            return top

        visit(self.root, 1)
        if len(leaf_depths) > 1:
            report.add(f"leaves at depths {sorted(leaf_depths)}")
        chain = list(itertools.islice(self.leaves(), len(dfs_leaves) + 1))
        if len(chain) != len(dfs_leaves) or any(a is not b for a, b in zip(chain, dfs_leaves)):
            report.add("sibling chain does not visit the leaves in tree order")
        last = None
        for leaf in chain:
            if leaf.next is not None and leaf.next.prev is not leaf:
                report.add(f"{leaf!r} next/prev links disagree")
            first = leaf.first_live_key()
            if first is not None and last is not None and first <= last:
                report.add(f"{leaf!r} starts at {first} which does not follow {last}")
            high = leaf.last_live_key()
            if high is not None:
                last = high
        total = sum(leaf.cnt for leaf in dfs_leaves)
        if total != self._count:
            report.add(f"leaves hold {total} entries but the index counts {self._count}")
        return report

    def _audit_leaf(self, leaf, report: AuditReport, *, sizes: bool) -> None:
        report.checked["leaves"] += 1
        report.checked["entries"] += leaf.cnt
        keys = leaf.keys
        cleared = [k & KEY_MAX for k in keys]
        if any(a >= b for a, b in zip(cleared, cleared[1:])):
            report.add(f"{leaf!r} keys are not strictly increasing")
        if leaf.kind is LeafKind.legacy:
            if leaf.cnt > self._f:
                report.add(f"{leaf!r} holds {leaf.cnt} > f entries")
            return
        if len(leaf.buf_keys) > self._tau:
            report.add(f"{leaf!r} buffer holds {len(leaf.buf_keys)} > tau entries")
        if len(leaf.buf_index) != len(leaf.buf_keys) or any(
            leaf.buf_index.get(k) != i for i, k in enumerate(leaf.buf_keys)
        ):
            report.add(f"{leaf!r} buffer hash and array disagree")
        if any(leaf.find_data(k) is not None for k in leaf.buf_keys):
            report.add(f"{leaf!r} stores a key both in data and buffer")
        live = sum(1 for k in keys if k <= KEY_MAX) + len(leaf.buf_keys)
        if live != leaf.cnt:
            report.add(f"{leaf!r} counts {leaf.cnt} live entries but holds {live}")
        bad = leaf.residual_violations(self._epsilon)
        if bad:
            report.add(f"{leaf!r} has {len(bad)} entries beyond epsilon, first key {bad[0]}")
        if sizes and leaf.cnt > self._beta:
            report.add(f"{leaf!r} holds {leaf.cnt} > beta live entries")
        if sizes and self._convert and leaf.cnt < self._alpha:
            report.add(f"{leaf!r} holds {leaf.cnt} < alpha live entries")


class BulkLoader:
    """Bottom-up construction in one pass over the sorted input.

    Leaves come from cone segmentation (at most beta entries, short segments
    pooled into legacy leaves). Internal nodes take about 3f/4 children. Once
    a parent has f/4 children its recursive least-squares model F is used to
    shift each further partition boundary, within a window of delta keys, to
    the key where |F(k) - R(k)| is smallest.
    """

    def __init__(self, params: IndexParams):
        self.params = params
        self.f = params.f
        self.fill = max(params.f // 2, 3 * params.f // 4)
        self.seed = max(1, params.f // 4)

    def load(self, index: HireIndex, keys: list[int], values: list[int]) -> None:
        check_sorted(keys)
        with index._lock, index.seq.write():
            if not keys:
                index.root = index.head = None
                index.height = 0
                return
            level, leaves = self._leaf_level(keys, values)
            link_leaves(leaves)
            index.head = leaves[0]
            while len(level) > 1:
                level = self._internal_level(level)
            index.root = level[0][2]
            index.height = index._measure_height()
            index._count = len(keys)
            index._max_key = keys[-1]

    def _new_rls(self, origin: int, span: int) -> RlsState:
        return RlsState(origin, max(1.0, float(span)))

    def _leaf_level(self, keys: list[int], values: list[int]) -> tuple[list[tuple[int, int, Any]], list]:
        """(first key, separator, node) per parent group, plus the leaves in order."""
        params = self.params
        eps, alpha, beta, f, delta = params.epsilon, params.alpha, params.beta, params.f, params.delta
        legacy = not params.disable_legacy_leaves
        min_model = alpha if legacy else 1
        groups: list[list[tuple[int, int, Any]]] = [[]]
        rls: list[RlsState | None] = [None]
        leaves: list = []

        def emit(leaf) -> None:
            group = groups[-1]
            first = leaf.keys[0]
            if rls[0] is None:
                rls[0] = self._new_rls(first, leaf.keys[-1] - first + 1)
            rls[0] = rls_update(rls[0], first, len(group))
            group.append((first, leaf.keys[-1], leaf))
            leaves.append(leaf)
            if len(group) >= self.fill:
                groups.append([])
                rls[0] = None

        n = len(keys)
        start = pool = 0
        while start < n:
            end, cone = cone_fit(keys, start, eps, beta)
            if legacy and end - start < alpha:
                start = end
                continue
            for leaf in pack_legacy(keys[pool:start], values[pool:start], f):
                emit(leaf)
            state = rls[0]
            if end < n and state is not None and state.count >= self.seed:
                target = len(groups[-1]) + 1
                best = end
                best_d = abs(state.predict(keys[end]) - target)
                for b in range(max(start + min_model, end - delta // 2), end):
                    d = abs(state.predict(keys[b]) - target)
                    if d < best_d:
                        best, best_d = b, d
                if best != end:
                    end, cone = cone_fit(keys, start, eps, best - start)
            emit(ModelLeaf(keys[start:end], values[start:end], cone.current_model(), eps, cone))
            start = pool = end
        for leaf in pack_legacy(keys[pool:n], values[pool:n], f):
            emit(leaf)
        if not groups[-1]:
            groups.pop()
        groups = self._even_tail(groups)
        if len(leaves) == 1:
            leaf = leaves[0]
            return [(leaf.keys[0], leaf.keys[-1], leaf)], leaves
        return [self._make_parent(group) for group in groups], leaves

    def _even_tail(self, groups: list[list]) -> list[list]:
        "Keep the last group at least half full by sharing with its predecessor."
        if len(groups) >= 2 and len(groups[-1]) < self.f // 2:
            merged = groups[-2] + groups[-1]
            groups[-2:] = chunk_evenly(merged, self.f)
        return groups

    def _make_parent(self, group: list[tuple[int, int, Any]]) -> tuple[int, int, InternalNode]:
        node = InternalNode.build([(sep, child) for _, sep, child in group], self.f, self.params.log_cap)
        return group[0][0], group[-1][1], node

    def _internal_level(self, items: list[tuple[int, int, Any]]) -> list[tuple[int, int, InternalNode]]:
        if len(items) <= self.f:
            return [self._make_parent(items)]
        f, delta = self.f, self.params.delta
        groups = []
        start = 0
        n = len(items)
        while start < n:
            remaining = n - start
            if remaining <= f:
                groups.append(items[start:])
                break
            lo = max(f // 2, self.fill - delta // 2)
            hi = min(f, self.fill + delta // 2, remaining)
            state = self._new_rls(items[start][0], items[start + 1][0] - items[start][0])
            for j in range(lo):
                state = rls_update(state, items[start + j][0], j)
            size = min(self.fill, hi)
            best_d = abs(state.predict(items[start + size][0]) - size) if start + size < n else 0.0
            for m in range(lo, hi + 1):
                if start + m >= n:
                    break
                d = abs(state.predict(items[start + m][0]) - m)
                if d < best_d:
                    size, best_d = m, d
            if 0 < remaining - size < f // 2:
                size = remaining - f // 2
            groups.append(items[start : start + size])
            start += size
        return [self._make_parent(group) for group in self._even_tail(groups)]


def check_sorted(keys: list[int]) -> None:
    "Raise unless `keys` is strictly increasing inside the live key domain."
    if not keys:
        return
    for a, b in zip(keys, keys[1:]):
        if b <= a:
            msg = f"Bulk-load keys must be strictly increasing: {b} after {a}"
            raise NonIncreasingKeyError(msg)
    if keys[0] < 0 or keys[-1] > KEY_MAX:
        msg = "Bulk-load keys must lie in [0, 2**63)"
        raise KeyDomainError(msg)


def bulk_load(pairs: Iterable[tuple[int, int]], params: IndexParams | None = None, **kwargs) -> HireIndex:
    return HireIndex.bulk_load(pairs, params, **kwargs)
