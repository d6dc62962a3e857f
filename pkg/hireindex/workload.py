# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
"""Operation sequences for the benchmark.

A fraction of the keys is bulk loaded. Inserts draw the remaining keys in a
random order; queries and deletes draw uniformly from the keys live at that
point of the sequence, tracked with a `SortedList`.
"""

from __future__ import annotations

import sys
from typing import NamedTuple

import numpy as np
from sortedcontainers import SortedList
from traitlets import Enum, Float, Int, List, TraitError, Unicode, validate
from traitlets.config import LoggingConfigurable

if sys.version_info >= (3, 11):
    from enum import StrEnum
else:
    from backports.strenum import StrEnum

__all__ = ["PRESETS", "Op", "OpKind", "Workload", "WorkloadSpec", "gen_workload", "parse_ratio"]

PRESETS = {
    "balanced": (1.0, 1.0, 1.0),
    "read-heavy": (8.0, 1.0, 1.0),
    "write-heavy": (1.0, 8.0, 1.0),
}


class OpKind(StrEnum):
    get = "get"
    range = "range"
    insert = "insert"
    delete = "delete"


class Op(NamedTuple):
    """One benchmark operation.

    `arg` is the value for inserts and the inclusive upper bound for ranges.
    """

    kind: OpKind
    key: int
    arg: int | None = None


class Workload(NamedTuple):
    bulk: list[tuple[int, int]]
    ops: list[Op]
    insert_pool_exhausted: int


def parse_ratio(text: str) -> tuple[float, float, float]:
    "Parse `Q:I:D` into three weights."
    parts = text.split(":")
    if len(parts) != 3:
        msg = f"Ratio must be Q:I:D but got {text!r}"
        raise ValueError(msg)
    return tuple(float(p) for p in parts)


class WorkloadSpec(LoggingConfigurable):
    bulk_fraction = Float(0.2, help="Fraction of the keys bulk loaded before the run").tag(config=True)
    ops_fraction = Float(0.75, help="Number of operations as a fraction of the dataset size").tag(config=True)
    workload = Enum(list(PRESETS), "balanced", help="Named query:insert:delete mix").tag(config=True)
    ratio = List(Float(), default_value=[], help="query, insert, delete weights; overrides the preset").tag(
        config=True
    )
    match_rate = Int(256, help="Results per range query at generation time").tag(config=True)
    query_mode = Enum(["range", "point"], "range", help="Issue queries as range scans or point lookups").tag(
        config=True
    )
    seed = Int(42, help="Seed for the dataset, the values and the operation sequence").tag(config=True)
    dataset = Unicode("uniform:100k", help="sosd:PATH, uniform:N, lognormal:N or segmented:N").tag(config=True)

    @validate("bulk_fraction")
    def _validate_bulk_fraction(self, proposal):
        if not 0 < proposal["value"] <= 1:
            msg = f"bulk_fraction must be in (0, 1] but got {proposal['value']}"
            raise TraitError(msg)
        return proposal["value"]

    @validate("ops_fraction")
    def _validate_ops_fraction(self, proposal):
        if proposal["value"] < 0:
            msg = f"ops_fraction must be >= 0 but got {proposal['value']}"
            raise TraitError(msg)
        return proposal["value"]

    @validate("ratio")
    def _validate_ratio(self, proposal):
        value = proposal["value"]
        if value and (len(value) != 3 or min(value) < 0 or not sum(value)):
            msg = f"ratio needs three non-negative weights that are not all zero, got {value}"
            raise TraitError(msg)
        return value

    @validate("match_rate")
    def _validate_match_rate(self, proposal):
        if proposal["value"] < 1:
            msg = f"match_rate must be >= 1 but got {proposal['value']}"
            raise TraitError(msg)
        return proposal["value"]

    @property
    def weights(self) -> tuple[float, float, float]:
        return tuple(self.ratio) if self.ratio else PRESETS[self.workload]

    def describe(self) -> dict:
        return {
            "dataset": self.dataset,
            "bulk_fraction": self.bulk_fraction,
            "ops_fraction": self.ops_fraction,
            "ratio": list(self.weights),
            "match_rate": self.match_rate,
            "query_mode": self.query_mode,
            "seed": self.seed,
        }


def gen_workload(keys: list[int], spec: WorkloadSpec) -> Workload:
    """Split `keys` into a bulk set and an insert pool and draw the operations.

    Fully determined by `keys` and `spec` (its seed included).
    """
    n = len(keys)
    rng = np.random.default_rng(spec.seed)
    values = rng.integers(0, 1 << 64, size=n, dtype=np.uint64).tolist()
    order = rng.permutation(n)
    n_bulk = min(n, max(1, round(spec.bulk_fraction * n))) if n else 0
    bulk_idx = np.sort(order[:n_bulk]).tolist()
    pool = order[n_bulk:].tolist()
    bulk = [(keys[i], values[i]) for i in bulk_idx]
    live = SortedList(k for k, _ in bulk)

    weights = np.asarray(spec.weights, dtype=float)
    n_ops = int(spec.ops_fraction * n)
    kinds = rng.choice(3, size=n_ops, p=weights / weights.sum()).tolist()
    picks = rng.random(n_ops).tolist()
    point = spec.query_mode == "point"
    span = spec.match_rate - 1
    next_insert = 0
    exhausted = 0
    ops: list[Op] = []
    for kind, u in zip(kinds, picks):
        if kind == 1 and next_insert >= len(pool):
            exhausted += 1
            kind = 0
        if kind != 1 and not live:
            if next_insert >= len(pool):
                continue
            kind = 1
        if kind == 1:
            i = pool[next_insert]
            next_insert += 1
            live.add(keys[i])
            ops.append(Op(OpKind.insert, keys[i], values[i]))
            continue
        j = int(u * len(live))
        if kind == 2:
            ops.append(Op(OpKind.delete, live.pop(j)))
        elif point:
            ops.append(Op(OpKind.get, live[j]))
        else:
            ops.append(Op(OpKind.range, live[j], live[min(j + span, len(live) - 1)]))
    if exhausted:
        spec.log.warning("Insert pool exhausted: %d insert draws became queries", exhausted)
    return Workload(bulk, ops, exhausted)
