# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
"""Primitive types, tunable parameters and the key-masking convention."""

from __future__ import annotations

import math
import sys
from typing import NamedTuple

from traitlets import Bool, Float, Instance, Int, TraitError, default, validate
from traitlets.config import Configurable

if sys.version_info >= (3, 11):
    from enum import StrEnum
else:
    from backports.strenum import StrEnum

__all__ = [
    "FLAG_BIT",
    "KEY_MAX",
    "LIVE_MASK",
    "BufferFullError",
    "CostModelParams",
    "DatasetError",
    "DoubleMaskError",
    "Entry",
    "HireError",
    "IndexParams",
    "InsertOutcome",
    "InvariantError",
    "JobAborted",
    "KeyDomainError",
    "LogFullError",
    "NonIncreasingKeyError",
    "OperationError",
    "OracleMismatchError",
    "check_key",
    "chunk_evenly",
    "is_masked",
    "mask_key",
    "unmask",
]

FLAG_BIT = 1 << 63
LIVE_MASK = FLAG_BIT - 1
KEY_MAX = LIVE_MASK


class HireError(Exception):
    pass


class KeyDomainError(HireError, ValueError):
    pass


class DoubleMaskError(HireError, ValueError):
    pass


class NonIncreasingKeyError(HireError, ValueError):
    pass


class BufferFullError(HireError, RuntimeError):
    pass


class LogFullError(HireError, RuntimeError):
    pass


class InvariantError(HireError, RuntimeError):
    pass


class DatasetError(HireError, OSError):
    pass


class JobAborted(HireError):
    """Raised inside a recalibration job to discard its snapshot."""


class OracleMismatchError(HireError, AssertionError):
    def __init__(self, msg: str, op_index: int = -1):
        super().__init__(msg)
        self.op_index = op_index


class OperationError(HireError, RuntimeError):
    "An index operation failed during a benchmark run."

    def __init__(self, msg: str, op_index: int = -1):
        super().__init__(msg)
        self.op_index = op_index


class Entry(NamedTuple):
    key: int
    value: int


class InsertOutcome(StrEnum):
    reused_slot = "reused-slot"
    buffered = "buffered"
    buffered_and_trigger = "buffered-and-trigger"
    updated = "updated"


def check_key(k: int) -> int:
    "Return k if it is a live key in [0, 2**63) otherwise raise KeyDomainError."
    if k < 0 or k > KEY_MAX:
        msg = f"Key {k} is outside the live key domain [0, 2**63)"
        raise KeyDomainError(msg)
    return k


def mask_key(k: int) -> int:
    """Set the tombstone flag on a live key.

    The flag-cleared value (and therefore the ordering) is unchanged.
    """
    if k & FLAG_BIT:
        msg = f"Key {k & LIVE_MASK} is already masked"
        raise DoubleMaskError(msg)
    return k | FLAG_BIT


def is_masked(k: int) -> bool:
    return bool(k & FLAG_BIT)


def unmask(k: int) -> int:
    return k & LIVE_MASK


class CostModelParams(Configurable):
    """Settings and running estimates of the recalibration cost model.

    Times are in nanoseconds. The estimates start unset (`None`) and are seeded
    by the first observation of each kind.
    """

    window_ops = Int(100_000, help="T_q: length of the query-count window in index operations").tag(config=True)
    q_th = Float(1024.0, help="Initial query-count threshold Q_th").tag(config=True)
    b_th_floor = Int(0, help="Buffer-size threshold floor B_th (0 derives tau/4)").tag(config=True)
    ewma_alpha = Float(0.2, help="Smoothing weight of the cost estimates").tag(config=True)
    slope_tolerance = Float(0.10, help="Relative slope difference allowed by the merge similarity gate").tag(
        config=True
    )
    rank_tolerance_eps = Float(2.0, help="Rank deviation allowed by the merge gate, in multiples of epsilon").tag(
        config=True
    )
    timing_sample_every = Int(64, help="Time one in N leaf lookups to feed the cost estimates").tag(config=True)

    b_th = Int(64)
    c_model = Float(None, allow_none=True)
    c_buffer_unit = Float(None, allow_none=True)
    c_retrain = Float(None, allow_none=True)

    @validate("window_ops", "timing_sample_every")
    def _validate_positive(self, proposal):
        if proposal["value"] < 1:
            msg = f"{proposal['trait'].name} must be >= 1 but got {proposal['value']}"
            raise TraitError(msg)
        return proposal["value"]

    @validate("ewma_alpha")
    def _validate_ewma_alpha(self, proposal):
        if not 0 < proposal["value"] <= 1:
            msg = f"ewma_alpha must be in (0, 1] but got {proposal['value']}"
            raise TraitError(msg)
        return proposal["value"]

    @validate("q_th")
    def _validate_q_th(self, proposal):
        return max(1.0, proposal["value"])

    @validate("b_th")
    def _validate_b_th(self, proposal):
        return max(1, proposal["value"])


class IndexParams(Configurable):
    """The tunables of a HIRE index.

    Only `f` is required; `alpha`, `beta`, `epsilon` and `tau` default to
    2f, f·f/2, f/4 and f respectively.
    """

    f = Int(256, help="Internal node fanout and legacy leaf capacity").tag(config=True)
    epsilon = Int(help="Model leaf error bound in slots").tag(config=True)
    alpha = Int(help="Minimum model leaf size").tag(config=True)
    beta = Int(help="Maximum model leaf size").tag(config=True)
    tau = Int(help="Model leaf buffer capacity").tag(config=True)
    delta = Int(8, help="Bulk-load partition key tolerance").tag(config=True)

    disable_legacy_leaves = Bool(False, help="Ablation: never create legacy leaves").tag(config=True)
    blocking_recalibration = Bool(False, help="Ablation: run recalibration inline on the caller").tag(config=True)
    background_worker = Bool(True, help="Run recalibration jobs on a background worker").tag(config=True)

    cost = Instance(CostModelParams)

    @default("epsilon")
    def _default_epsilon(self):
        return max(1, self.f // 4)

    @default("alpha")
    def _default_alpha(self):
        return 2 * self.f

    @default("beta")
    def _default_beta(self):
        return self.f * (self.f // 2)

    @default("tau")
    def _default_tau(self):
        return self.f

    @default("cost")
    def _default_cost(self):
        return CostModelParams(parent=self)

    @validate("f", "epsilon", "alpha", "beta", "tau", "delta")
    def _validate_positive(self, proposal):
        name = proposal["trait"].name
        value = proposal["value"]
        minimum = 4 if name == "f" else 1
        if value < minimum:
            msg = f"{name} must be >= {minimum} but got {value}"
            raise TraitError(msg)
        return value

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self.check()
        if not self.cost.b_th_floor:
            self.cost.b_th = max(1, self.tau // 4)
        else:
            self.cost.b_th = self.cost.b_th_floor

    def check(self) -> None:
        "Check the cross-parameter constraints."
        if self.alpha > self.beta:
            msg = f"alpha ({self.alpha}) > beta ({self.beta})"
            raise TraitError(msg)
        if self.epsilon > self.f:
            msg = f"epsilon ({self.epsilon}) > f ({self.f})"
            raise TraitError(msg)

    @property
    def log_cap(self) -> int:
        return math.ceil(0.1 * self.f)

    @property
    def half_f(self) -> int:
        return self.f // 2

    def describe(self) -> dict:
        return {
            "f": self.f,
            "epsilon": self.epsilon,
            "alpha": self.alpha,
            "beta": self.beta,
            "tau": self.tau,
            "delta": self.delta,
            "log_cap": self.log_cap,
            "disable_legacy_leaves": self.disable_legacy_leaves,
            "blocking_recalibration": self.blocking_recalibration,
            "background_worker": self.background_worker,
        }


def chunk_evenly(items: list, capacity: int) -> list[list]:
    "Split `items` into ceil(n / capacity) consecutive chunks whose sizes differ by at most one."
    n = len(items)
    if not n:
        return []
    parts = -(-n // capacity)
    size, extra = divmod(n, parts)
    out = []
    start = 0
    for i in range(parts):
        end = start + size + (1 if i < extra else 0)
        out.append(items[start:end])
        start = end
    return out
