# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
"""Linear models and the routines that fit them.

- `ConeFitter` is the streaming bounded-error fit used to build and retrain
  model leaves (greedy shrinking cone anchored at the segment's first point).
- `fit_least_squares` fits the routing model of internal nodes.
- `RlsState` / `rls_update` keep the parent model of the bulk loader current
  as partition keys are appended.

Keys are Python ints. Every model carries an `origin` key and predicts
`slope * (k - origin) + intercept`, so 63-bit keys are differenced exactly
before they are converted to floating point.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence

import numpy as np

from hireindex.core import NonIncreasingKeyError

__all__ = [
    "ConeFitter",
    "LinearModel",
    "RlsState",
    "cone_add_point",
    "fit_least_squares",
    "max_error",
    "predict",
    "rls_update",
]

RLS_LAMBDA = 1e-6


class LinearModel:
    __slots__ = ("epsilon", "intercept", "origin", "slope")

    def __init__(self, slope: float = 0.0, intercept: float = 0.0, epsilon: float | None = None, origin: int = 0):
        self.slope = float(slope)
        self.intercept = float(intercept)
        self.epsilon = epsilon
        self.origin = origin

    def __repr__(self):
        return (
            f"LinearModel(slope={self.slope!r}, intercept={self.intercept!r}, "
            f"epsilon={self.epsilon!r}, origin={self.origin!r})"
        )

    def raw(self, k: int) -> float:
        "The unrounded, unclamped prediction."
        return self.slope * (k - self.origin) + self.intercept

    def scaled(self, factor: float) -> LinearModel:
        "A copy whose predictions are multiplied by `factor`."
        return LinearModel(self.slope * factor, self.intercept * factor, None, self.origin)


def predict(m: LinearModel, k: int, length: int) -> int:
    """Predict the slot of `k` in an array of `length` slots.

    Rounds half up and clamps to [0, length - 1].
    """
    slot = math.floor(m.slope * (k - m.origin) + m.intercept + 0.5)
    if slot < 0:
        return 0
    if slot >= length:
        return length - 1
    return slot


def max_error(m: LinearModel, points: Iterable[tuple[int, int]], length: int) -> int:
    "Measured maximum |predict - rank| over (key, rank) points in an array of `length` slots."
    return max((abs(predict(m, k, length) - r) for k, r in points), default=0)


class ConeFitter:
    """Greedy one-pass bounded-error linear fit.

    The anchor (first accepted point) is predicted exactly. Each further point
    narrows the interval of slopes that keep every accepted point within
    `epsilon`; a point that would empty the interval is rejected and leaves the
    fitter unchanged.
    """

    __slots__ = ("anchor_key", "anchor_rank", "count", "epsilon", "last_key", "slope_hi", "slope_lo")

    def __init__(self, epsilon: float):
        self.epsilon = epsilon
        self.anchor_key: int | None = None
        self.anchor_rank = 0
        self.slope_lo = 0.0
        self.slope_hi = math.inf
        self.count = 0
        self.last_key: int | None = None

    def copy(self) -> ConeFitter:
        new = ConeFitter(self.epsilon)
        for name in self.__slots__:
            setattr(new, name, getattr(self, name))
        return new

    def add_point(self, k: int, rank: int) -> bool:
        if self.last_key is not None and k <= self.last_key:
            msg = f"Keys must be strictly increasing: {k} after {self.last_key}"
            raise NonIncreasingKeyError(msg)
        if self.anchor_key is None:
            self.anchor_key = k
            self.anchor_rank = rank
            self.last_key = k
            self.count = 1
            return True
        dk = k - self.anchor_key
        dr = rank - self.anchor_rank
        lo = max(self.slope_lo, (dr - self.epsilon) / dk)
        hi = min(self.slope_hi, (dr + self.epsilon) / dk)
        if lo > hi:
            return False
        self.slope_lo = lo
        self.slope_hi = hi
        self.last_key = k
        self.count += 1
        return True

    def current_model(self) -> LinearModel:
        if self.anchor_key is None:
            return LinearModel(0.0, 0.0, self.epsilon, 0)
        if self.count == 1 or math.isinf(self.slope_hi):
            slope = 0.0
        else:
            slope = (self.slope_lo + self.slope_hi) / 2
        return LinearModel(slope, float(self.anchor_rank), self.epsilon, self.anchor_key)


def cone_add_point(fitter: ConeFitter, k: int, rank: int) -> bool:
    return fitter.add_point(k, rank)


def fit_least_squares(points: Sequence[tuple[int, int]] | Iterable[tuple[int, int]]) -> LinearModel:
    """Ordinary least squares over (key, rank) pairs.

    The measured maximum error is recorded as the model's `epsilon`.
    """
    points = list(points)
    if not points:
        msg = "fit_least_squares needs at least one point"
        raise ValueError(msg)
    origin = points[0][0]
    if len(points) == 1:
        return LinearModel(0.0, float(points[0][1]), 0, origin)
    x = np.fromiter((k - origin for k, _ in points), dtype=np.float64, count=len(points))
    y = np.fromiter((r for _, r in points), dtype=np.float64, count=len(points))
    xm = x.mean()
    ym = y.mean()
    dx = x - xm
    sxx = float(dx @ dx)
    slope = float(dx @ (y - ym)) / sxx if sxx > 0 else 0.0
    intercept = float(ym - slope * xm)
    residual = np.abs(np.floor(slope * x + intercept + 0.5) - y)
    return LinearModel(slope, intercept, float(residual.max()), origin)


class RlsState:
    """Recursive least squares over (key, rank) with forgetting factor 1.

    Keys are shifted by `origin` and divided by `scale` so that the 2x2 gain
    matrix stays well conditioned for sparse 63-bit keys.
    """

    __slots__ = ("coefficients", "count", "gain_matrix", "origin", "scale")

    def __init__(self, origin: int = 0, scale: float = 1.0):
        self.origin = origin
        self.scale = float(scale) if scale > 0 else 1.0
        self.coefficients = np.zeros(2)
        self.gain_matrix = np.eye(2) / RLS_LAMBDA
        self.count = 0

    def copy(self) -> RlsState:
        new = RlsState(self.origin, self.scale)
        new.coefficients = self.coefficients.copy()
        new.gain_matrix = self.gain_matrix.copy()
        new.count = self.count
        return new

    def feature(self, k: int) -> np.ndarray:
        return np.array(((k - self.origin) / self.scale, 1.0))

    def predict(self, k: int) -> float:
        return float(self.feature(k) @ self.coefficients)

    def model(self) -> LinearModel:
        "The current fit expressed as a LinearModel in key units."
        slope, intercept = self.coefficients
        return LinearModel(float(slope) / self.scale, float(intercept), None, self.origin)


def rls_update(s: RlsState, k: int, rank: int) -> RlsState:
    "Return the state after observing (k, rank); `s` is not modified."
    phi = s.feature(k)
    p_phi = s.gain_matrix @ phi
    gain = p_phi / (1.0 + phi @ p_phi)
    new = RlsState(s.origin, s.scale)
    new.coefficients = s.coefficients + gain * (rank - phi @ s.coefficients)
    gain_matrix = s.gain_matrix - np.outer(gain, p_phi)
    new.gain_matrix = (gain_matrix + gain_matrix.T) / 2
    new.count = s.count + 1
    return new
