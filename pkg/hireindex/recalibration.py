# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
"""Cost model and non-blocking recalibration.

Every structural change that may be expensive (retraining a model leaf,
converting it to legacy leaves, merging legacy leaves into a model leaf) is a
`Job`. The pipeline is the same for all kinds:

1. When the job is requested the target leaves are marked and a fresh
   `MlsLog` is attached; from then on updates routed to them are appended to
   the log instead of being applied.
2. When the job starts, the worker walks up the access path with the push-up
   budget σ, marks every ancestor it may have to modify and takes private
   copies of them.
3. The replacement leaves are built and spliced into the copies without
   holding the writer lock.
4. Under the writer lock the top copy replaces the original subtree in one
   link assignment, the originals are retired to the grace period and the log
   is replayed against the new subtree before the marks are dropped.
"""

from __future__ import annotations

import itertools
import math
import sys
import time
from collections import deque
from concurrent.futures import ThreadPoolExecutor, wait
from typing import TYPE_CHECKING, Any

from traitlets import Instance
from traitlets.config import LoggingConfigurable

from hireindex.core import CostModelParams, InvariantError, JobAborted, chunk_evenly
from hireindex.hookspecs import pm
from hireindex.internal import InternalNode, retrain_and_remap
from hireindex.leaf import LeafKind, LegacyLeaf, ModelLeaf, cone_fit, link_leaves, pack_legacy, segment_leaves

if sys.version_info >= (3, 11):
    from enum import StrEnum
else:
    from backports.strenum import StrEnum

if TYPE_CHECKING:
    from concurrent.futures import Future

    from hireindex.leaf import LeafStats
    from hireindex.tree import HireIndex

__all__ = [
    "Job",
    "JobKind",
    "LogOp",
    "MlsLog",
    "PACKING_SLACK",
    "Observation",
    "RecalibrationEngine",
    "Trigger",
    "next_budget",
    "push_budget",
    "should_retrain",
    "update_cost_estimates",
]

_SEQ = itertools.count(1)
_JOB_IDS = itertools.count(1)


class Trigger(StrEnum):
    none = "no"
    active = "active"
    passive = "passive"


class Observation(StrEnum):
    retrain_time = "retrain_time"
    buffer_scan = "buffer_scan"
    model_search = "model_search"


class JobKind(StrEnum):
    retrain = "retrain"
    convert_to_legacy = "convert_to_legacy"
    forward_merge = "forward_merge"
    backward_merge = "backward_merge"


class LogOp(StrEnum):
    insert = "insert"
    delete = "delete"


def should_retrain(stats: LeafStats, buffer_len: int, cm: CostModelParams, tau: int, window_id: int) -> Trigger:
    """Decide whether a model leaf should be retrained.

    The passive trigger (a full buffer) takes precedence over the active one.
    """
    if buffer_len >= tau:
        return Trigger.passive
    if buffer_len >= cm.b_th and stats.current(window_id) >= cm.q_th:
        return Trigger.active
    return Trigger.none


def update_cost_estimates(
    cm: CostModelParams, observation: Observation, elapsed: float, length: int = 0
) -> CostModelParams:
    """Fold one timing observation (nanoseconds) into the running estimates.

    Q_th moves to the decision boundary C_retrain / (c_buffer(B_th) - c_model)
    once all three estimates exist, and to +inf when buffering is never worse.
    """
    if elapsed <= 0:
        msg = f"Observation time must be positive, got {elapsed}"
        raise ValueError(msg)
    a = cm.ewma_alpha

    def ewma(old: float | None, x: float) -> float:
        return x if old is None else (1 - a) * old + a * x

    match observation:
        case Observation.retrain_time:
            cm.c_retrain = ewma(cm.c_retrain, elapsed)
        case Observation.buffer_scan:
            cm.c_buffer_unit = ewma(cm.c_buffer_unit, elapsed / max(1, length))
        case Observation.model_search:
            cm.c_model = ewma(cm.c_model, elapsed)
    if None not in (cm.c_retrain, cm.c_buffer_unit, cm.c_model):
        delta = cm.c_buffer_unit * cm.b_th / 2 - cm.c_model
        cm.q_th = cm.c_retrain / delta if delta > 0 else math.inf
    return cm


# Packing the legacy runs between model segments can yield one leaf more than
# ceil(n / f). The PAP reserves room for it on top of the exact push-up budget.
PACKING_SLACK = 1


def push_budget(data_len: int, buffer_len: int, f: int, replaced: int = 1) -> int:
    "σ: how many extra children the replacement of `replaced` leaves may push into their parent."
    return max(0, math.ceil((data_len + buffer_len) / f) - replaced)


def next_budget(sigma: int, node: InternalNode, f: int) -> int:
    "σ for the level above `node` once its free slots have absorbed what they can."
    return max(0, math.ceil((sigma - (f - node.cnt)) / f))


class MlsLog:
    """Updates captured while a subtree is being rebuilt.

    `latest` holds the newest (seq, op, value) per key so that readers can
    overlay the log in O(1).
    """

    __slots__ = ("entries", "job", "latest", "nodes")

    def __init__(self):
        self.entries: list[tuple[int, LogOp, int, int | None]] = []
        self.latest: dict[int, tuple[int, LogOp, int | None]] = {}
        self.nodes: list[Any] = []
        self.job: Job | None = None

    def __len__(self):
        return len(self.entries)

    def __repr__(self):
        return f"<MlsLog entries={len(self.entries)} nodes={len(self.nodes)}>"

    def append(self, op: LogOp, k: int, v: int | None = None) -> int:
        seq = next(_SEQ)
        self.entries.append((seq, op, k, v))
        self.latest[k] = (seq, op, v)
        return seq

    def mark(self, node) -> None:
        node.mls_log = self
        node.under_retrain = True
        self.nodes.append(node)

    def unmark(self) -> None:
        for node in self.nodes:
            # Retired nodes keep the log so that late readers still overlay it.
            if node.mls_log is self and not node.retired:
                node.under_retrain = False
                node.mls_log = None
        self.nodes = []


class Job:
    __slots__ = (
        "copies",
        "created",
        "hint",
        "id",
        "kind",
        "log",
        "mls_root",
        "pap",
        "requeued",
        "sigma",
        "targets",
        "trigger",
    )

    def __init__(self, kind: JobKind, targets: list, hint: int | None, trigger: Trigger = Trigger.none):
        self.id = next(_JOB_IDS)
        self.kind = kind
        self.targets = targets
        self.hint = hint
        self.trigger = trigger
        self.log = MlsLog()
        self.log.job = self
        self.pap: list[InternalNode] = []
        self.copies: list[InternalNode] = []
        self.mls_root = None
        self.sigma = 0
        self.requeued = 0
        self.created = time.perf_counter_ns()

    def __repr__(self):
        return f"<Job {self.id} {self.kind} targets={len(self.targets)} trigger={self.trigger}>"


class RecalibrationEngine(LoggingConfigurable):
    """Schedules and runs recalibration jobs for one index."""

    index = Instance("hireindex.tree.HireIndex")
    cost = Instance(CostModelParams)

    def __init__(self, index: HireIndex, **kwargs):
        super().__init__(index=index, cost=index.params.cost, parent=index, **kwargs)
        params = index.params
        self._executor: ThreadPoolExecutor | None = None
        if params.background_worker and not params.blocking_recalibration:
            self._executor = ThreadPoolExecutor(max_workers=1, thread_name_prefix="hire-recal")
        self._futures: set[Future] = set()
        self._pending: deque[Job] = deque()
        self._inline = False
        self._replaying: MlsLog | None = None
        self._futile: set[tuple] = set()
        self._closed = False
        self.counters = dict.fromkeys(
            ("requested", "published", "aborted", "dropped", "requeued", "failed", "refused"), 0
        )
        self.published_by_kind = dict.fromkeys(JobKind, 0)

    # Scheduling

    def _is_free(self, node) -> bool:
        log = node.mls_log
        return log is None or log is self._replaying

    def request(self, kind: JobKind, targets: list, hint: int | None, trigger: Trigger = Trigger.none) -> bool:
        """Mark `targets` and queue a job for them. The writer lock must be held.

        Returns False when a target already belongs to another job.
        """
        if self._closed or not all(self._is_free(t) for t in targets):
            self.counters["refused"] += 1
            return False
        job = Job(kind, targets, hint, trigger)
        for target in targets:
            job.log.mark(target)
        self.index._active_logs[id(job.log)] = job.log
        self.counters["requested"] += 1
        self.log.debug("Requested %r", job)
        self._submit(job)
        return True

    def try_request(self, kind: JobKind, targets: list, hint: int | None, trigger: Trigger) -> bool:
        "`request` from a reader: give up instead of waiting for the writer lock."
        lock = self.index._lock
        if not lock.acquire(blocking=False):
            return False
        try:
            return self.request(kind, targets, hint, trigger)
        finally:
            lock.release()

    def _submit(self, job: Job) -> None:
        if self.index.params.blocking_recalibration:
            self._pending.append(job)
            if not self._inline:
                self._inline = True
                try:
                    while self._pending:
                        self.run(self._pending.popleft())
                finally:
                    self._inline = False
        elif self._executor is not None:
            future = self._executor.submit(self.run, job)
            self._futures.add(future)
            future.add_done_callback(self._futures.discard)
        else:
            self._pending.append(job)

    def run_pending(self) -> int:
        "Run queued jobs on the calling thread (used when no worker thread is configured)."
        count = 0
        while self._pending:
            self.run(self._pending.popleft())
            count += 1
        return count

    def quiesce(self, timeout: float | None = None) -> bool:
        "Wait until no job is queued or running; return False on timeout."
        deadline = None if timeout is None else time.monotonic() + timeout
        while True:
            if self._executor is None:
                self.run_pending()
            futures = list(self._futures)
            if not futures and not self._pending:
                break
            remaining = None if deadline is None else max(0.0, deadline - time.monotonic())
            done, not_done = wait(futures, timeout=remaining)
            if not_done and deadline is not None and time.monotonic() >= deadline:
                return False
        self.index.grace.reclaim()
        return True

    def close(self) -> None:
        if self._closed:
            return
        self.quiesce()
        self._closed = True
        if self._executor is not None:
            self._executor.shutdown(wait=True)
            self._executor = None

    def active_jobs(self) -> int:
        return len(self._futures) + len(self._pending)

    def stats(self) -> dict:
        cm = self.cost
        return {
            **self.counters,
            "published_by_kind": {str(k): v for k, v in self.published_by_kind.items()},
            "active": self.active_jobs(),
            "q_th": cm.q_th,
            "b_th": cm.b_th,
            "c_model": cm.c_model,
            "c_buffer_unit": cm.c_buffer_unit,
            "c_retrain": cm.c_retrain,
        }

    # Cost model

    def record_observation(self, observation: Observation, elapsed: float, length: int = 0) -> None:
        if elapsed > 0:
            update_cost_estimates(self.cost, observation, elapsed, length)

    def check_leaf(self, leaf: ModelLeaf, window_id: int, hint: int, *, reader: bool) -> Trigger:
        "Evaluate the retrain triggers for a model leaf and request a job if one fires."
        params = self.index.params
        trigger = should_retrain(leaf.stats, len(leaf.buf_keys), self.cost, params.tau, window_id)
        if trigger is Trigger.none and leaf.cnt > params.beta:
            trigger = Trigger.passive
        if trigger is not Trigger.none and leaf.mls_log is None:
            if reader:
                self.try_request(JobKind.retrain, [leaf], hint, trigger)
            else:
                self.request(JobKind.retrain, [leaf], hint, trigger)
        return trigger

    def _similar(self, model, base: int, other: LegacyLeaf) -> bool:
        cm = self.cost
        if not other.keys:
            return True
        sa = model.slope
        sb = other.regression().slope
        top = max(abs(sa), abs(sb))
        if top and abs(sa - sb) > cm.slope_tolerance * top:
            return False
        limit = cm.rank_tolerance_eps * self.index.params.epsilon
        first = model.raw(other.keys[0]) - base
        last = model.raw(other.keys[-1]) - (base + other.cnt - 1)
        return abs(first) <= limit and abs(last) <= limit

    def consider_legacy(self, path: list, leaf: LegacyLeaf) -> bool:
        """Look for a legacy→model transformation around `leaf`. The writer lock must be held.

        A model leaf immediately before `leaf` under the same parent is
        extended (forward merge); otherwise the run of legacy siblings
        containing `leaf` is consolidated (backward merge).
        """
        if len(path) < 2 or leaf.mls_log is not None:
            return False
        params = self.index.params
        children = path[-2].child_list()
        i = next((j for j, c in enumerate(children) if c is leaf), None)
        if i is None:
            return False
        prev = children[i - 1] if i else None
        if prev is not None and prev.kind is LeafKind.model:
            if prev.mls_log is not None or prev.cnt + leaf.cnt > params.beta:
                return False
            if not self._similar(prev.model, len(prev.keys), leaf):
                return False
            return self._request_merge(JobKind.forward_merge, [prev, leaf])
        lo = i
        while lo > 0 and children[lo - 1].kind is LeafKind.legacy and children[lo - 1].mls_log is None:
            lo -= 1
        hi = i + 1
        while hi < len(children) and children[hi].kind is LeafKind.legacy and children[hi].mls_log is None:
            hi += 1
        run = children[lo:hi]
        if len(run) < 2 or sum(r.cnt for r in run) < params.alpha:
            return False
        for a, b in zip(run, run[1:]):
            if not self._similar(a.regression(), a.cnt, b):
                return False
        return self._request_merge(JobKind.backward_merge, run)

    def _request_merge(self, kind: JobKind, targets: list) -> bool:
        signature = (kind, *(id(t) for t in targets), sum(t.cnt for t in targets))
        if signature in self._futile:
            return False
        return self.request(kind, targets, targets[0].first_live_key())

    # Job pipeline

    def run(self, job: Job) -> None:
        index = self.index
        try:
            with index._lock:
                if not self._prepare(job):
                    return
            start = time.perf_counter_ns()
            try:
                new_leaves = self._rebuild(job)
                top = self._splice(job, new_leaves)
            except JobAborted as e:
                self.log.warning("Aborted %r: %s", job, e)
                self._abandon(job, aborted=True)
                return
            elapsed = max(1, time.perf_counter_ns() - start)
            with index._lock:
                try:
                    self._publish(job, new_leaves, top)
                except JobAborted as e:
                    self.log.warning("Aborted %r at publication: %s", job, e)
                    self._abandon(job, aborted=True)
                    return
            if job.kind is JobKind.retrain:
                self.record_observation(Observation.retrain_time, elapsed)
            self.counters["published"] += 1
            self.published_by_kind[job.kind] += 1
            pm.hook.on_job_published(engine=self, job=job, elapsed=elapsed)
            index.grace.reclaim()
        except Exception as e:
            self.counters["failed"] += 1
            self.log.exception("Recalibration %r failed", job)
            pm.hook.on_job_error(engine=self, job=job, error=e)
            self._abandon(job, aborted=False)

    def _prepare(self, job: Job) -> bool:
        "Locate the targets, budget the PAP, mark and copy it. Runs under the writer lock."
        index = self.index
        targets = job.targets
        if any(t.retired or t.mls_log is not job.log for t in targets):
            self.log.debug("Dropping stale %r", job)
            self.counters["dropped"] += 1
            self._abandon(job, aborted=None)
            return False
        path = index._find_path(targets[0], job.hint)
        if path is None:
            msg = f"{targets[0]!r} of {job!r} is not reachable from the root"
            raise InvariantError(msg)
        f = index.params.f
        data = sum(len(t.keys) + len(getattr(t, "buf_keys", ())) for t in targets)
        job.sigma = push_budget(data, 0, f, len(targets))
        sigma = job.sigma + PACKING_SLACK
        ancestors = path[:-1]
        pap: list[InternalNode] = []
        level = len(ancestors) - 1
        if level >= 0:
            pap.append(ancestors[level])
            sigma = next_budget(sigma, ancestors[level], f)
            level -= 1
        while sigma > 0 and level >= 0:
            pap.append(ancestors[level])
            sigma = next_budget(sigma, ancestors[level], f)
            level -= 1
        if any(not self._is_free(node) for node in pap):
            self.log.warning("Re-enqueueing %r: its access path overlaps another job", job)
            self.counters["requeued"] += 1
            job.requeued += 1
            self._submit(job)
            return False
        for node in pap:
            job.log.mark(node)
        copies = [node.snapshot() for node in pap]
        for i in range(1, len(copies)):
            copies[i].replace_child(pap[i - 1], copies[i - 1])
        job.pap = pap
        job.copies = copies
        job.mls_root = pap[-1] if pap else targets[0]
        self.log.debug("Prepared %r: pap=%d budget_left=%d", job, len(pap), sigma)
        return True

    def _rebuild(self, job: Job) -> list:
        "Build the replacement leaves from the frozen targets."
        params = self.index.params
        keys: list[int] = []
        values: list[int] = []
        for target in job.targets:
            for k, v in target.live_items():
                keys.append(k)
                values.append(v)
        n = len(keys)
        match job.kind:
            case JobKind.retrain:
                return segment_leaves(
                    keys,
                    values,
                    epsilon=params.epsilon,
                    alpha=params.alpha,
                    beta=params.beta,
                    f=params.f,
                    legacy=not params.disable_legacy_leaves,
                )
            case JobKind.convert_to_legacy:
                leaves = pack_legacy(keys, values, params.f)
                link_leaves(leaves)
                return leaves
            case JobKind.forward_merge:
                return [self._extend_model(*job.targets)]
            case JobKind.backward_merge:
                if n > params.beta:
                    msg = f"{n} entries exceed beta={params.beta}"
                    raise JobAborted(msg)
                if n < params.alpha:
                    msg = f"{n} entries are below alpha={params.alpha}"
                    raise JobAborted(msg)
                end, cone = cone_fit(keys, 0, params.epsilon, n)
                if end < n:
                    msg = f"entries do not fit one model within epsilon={params.epsilon} ({end}/{n})"
                    raise JobAborted(msg)
                return [ModelLeaf(keys, values, cone.current_model(), params.epsilon, cone)]
        msg = f"Unknown job kind {job.kind}"
        raise InvariantError(msg)

    def _extend_model(self, leaf: ModelLeaf, legacy: LegacyLeaf) -> ModelLeaf:
        """Stream the entries of `legacy` into the cone behind `leaf`'s model.

        The data slots of `leaf` stay where they are, tombstones included, and
        its buffer carries over. The first entry the cone rejects aborts the merge.
        """
        params = self.index.params
        eps = params.epsilon
        size = len(leaf.keys) + len(leaf.buf_keys) + legacy.cnt
        if size > params.beta:
            msg = f"{size} slots exceed beta={params.beta}"
            raise JobAborted(msg)
        cone = leaf.extension_cone(eps)
        if cone is None:
            msg = f"data slots of {leaf!r} no longer fit one model within epsilon={eps}"
            raise JobAborted(msg)
        keys = leaf.keys.copy()
        values = leaf.values.copy()
        for k, v in legacy.live_items():
            if not cone.add_point(k, len(keys)):
                msg = f"{k} leaves the cone of {leaf!r} ({len(keys) - len(leaf.keys)}/{legacy.cnt} absorbed)"
                raise JobAborted(msg)
            keys.append(k)
            values.append(v)
        merged = ModelLeaf(keys, values, cone.current_model(), eps, cone)
        if merged.residual_violations(eps):
            msg = f"reused slots of {leaf!r} fall outside the extended model"
            raise JobAborted(msg)
        merged.buf_keys = leaf.buf_keys.copy()
        merged.buf_values = leaf.buf_values.copy()
        merged.buf_index = leaf.buf_index.copy()
        merged.cnt += len(merged.buf_keys)
        return merged

    def _splice(self, job: Job, new_leaves: list) -> list[tuple[int, Any]]:
        """Replace the targets by `new_leaves` in the PAP copies, bottom-up.

        Returns the (separator, node) pairs that replace the MLS root.
        """
        pushed = len(new_leaves) - len(job.targets)
        if pushed > job.sigma + PACKING_SLACK:
            msg = f"{job!r} pushed {pushed} extra leaves; its PAP was budgeted for {job.sigma + PACKING_SLACK}"
            raise InvariantError(msg)
        params = self.index.params
        f = params.f
        pairs = [(leaf.last_live_key(), leaf) for leaf in new_leaves]
        if not job.copies:
            return pairs
        old: list = job.targets
        for level, copy in enumerate(job.copies):
            group_sep = max(copy.separator_of(c) for c in old)
            if pairs:
                pairs[-1] = (max(group_sep, pairs[-1][0]), pairs[-1][1])
            ids = {id(c) for c in old}
            merged = [p for p in copy.live_pairs() if id(p[1]) not in ids]
            merged.extend(pairs)
            merged.sort(key=lambda e: e[0])
            if not merged:
                empty = LegacyLeaf()
                new_leaves.append(empty)
                merged = [(group_sep, empty)]
            chunks = chunk_evenly(merged, f)
            nodes = []
            for i, chunk in enumerate(chunks):
                if i == 0:
                    retrain_and_remap(copy, chunk)
                    nodes.append(copy)
                else:
                    nodes.append(InternalNode.build(chunk, f, copy.log_cap))
            pairs = [(chunk[-1][0], node) for chunk, node in zip(chunks, nodes)]
            pairs[-1] = (max(group_sep, pairs[-1][0]), pairs[-1][1])
            if len(pairs) > 1 and level + 1 < len(job.copies):
                self.log.debug("%r pushed %d nodes to level %d", job, len(pairs) - 1, level + 1)
            old = [copy]
        return pairs

    def _publish(self, job: Job, new_leaves: list, top: list[tuple[int, Any]]) -> None:
        "Swap the rebuilt subtree in, retire the originals and replay the log. Runs under the writer lock."
        index = self.index
        log = job.log
        path = index._find_path(job.mls_root, job.hint)
        if path is None:
            msg = f"MLS root of {job!r} is no longer reachable"
            raise InvariantError(msg)
        parent = path[-2] if len(path) >= 2 else None
        if parent is not None and len(top) > 1:
            msg = f"push-up budget exceeded: {len(top)} nodes for one link"
            raise JobAborted(msg)
        for node in (*job.copies, *new_leaves):
            log.mark(node)
        with index.seq.write():
            self._swap(job, new_leaves, top, parent)
        index.grace.retire([*job.targets, *job.pap])
        self._replay(job)
        with index.seq.write():
            log.unmark()
            index._active_logs.pop(id(log), None)
            index._collapse_root()
        self.log.debug("Published %r: %d new leaves, %d replayed", job, len(new_leaves), len(log))

    def _swap(self, job: Job, new_leaves: list, top: list[tuple[int, Any]], parent: InternalNode | None) -> None:
        "Link the new leaves into the sibling chain and replace the MLS root in one assignment."
        index = self.index
        first, last = job.targets[0], job.targets[-1]
        prev, nxt = first.prev, last.next
        if new_leaves:
            new_leaves[0].prev = prev
            new_leaves[-1].next = nxt
            if nxt is not None:
                nxt.prev = new_leaves[-1]
            if prev is not None:
                prev.next = new_leaves[0]
        else:
            if nxt is not None:
                nxt.prev = prev
            if prev is not None:
                prev.next = nxt
        if index.head is first:
            index.head = new_leaves[0] if new_leaves else nxt
        if parent is not None:
            parent.replace_child(job.mls_root, top[0][1])
        else:
            index._set_root_from(top)

    def _replay(self, job: Job) -> None:
        "Apply the captured updates one at a time; readers retry any read that overlaps one."
        index = self.index
        self._replaying = job.log
        try:
            for _, op, k, v in job.log.entries:
                with index.seq.write():
                    index._apply(op, k, v, bypass=job.log)
        finally:
            self._replaying = None

    def _abandon(self, job: Job, *, aborted: bool | None) -> None:
        "Drop the snapshot and apply the captured updates to the original subtree."
        index = self.index
        signature = (job.kind, *(id(t) for t in job.targets), sum(t.cnt for t in job.targets))
        with index._lock:
            self._replay(job)
            with index.seq.write():
                job.log.unmark()
                index._active_logs.pop(id(job.log), None)
        if aborted:
            self.counters["aborted"] += 1
            if job.kind in (JobKind.forward_merge, JobKind.backward_merge):
                if len(self._futile) > 10_000:
                    self._futile.clear()
                self._futile.add(signature)

