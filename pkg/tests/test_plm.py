# Copyright (c) hireindex contributors.
# Distributed under the terms of the Modified BSD License.
from __future__ import annotations

import numpy as np
import pytest

from hireindex.core import NonIncreasingKeyError
from hireindex.plm import ConeFitter, LinearModel, RlsState, fit_least_squares, max_error, predict, rls_update


def test_predict_rounds_and_clamps():
    m = LinearModel(0.5, 0.0)
    assert predict(m, 3, 10) == 2
    assert predict(m, 100, 10) == 9
    assert predict(LinearModel(1.0, -5.0), 0, 10) == 0
    assert predict(LinearModel(1.0, 0.0, origin=1 << 62), (1 << 62) + 4, 10) == 4


def test_cone_anchor_only():
    fitter = ConeFitter(4)
    assert fitter.add_point(100, 0)
    m = fitter.current_model()
    assert predict(m, 100, 1) == 0


def test_cone_rejects_decreasing_keys():
    fitter = ConeFitter(4)
    fitter.add_point(10, 0)
    with pytest.raises(NonIncreasingKeyError):
        fitter.add_point(10, 1)


def test_cone_rejected_point_leaves_state():
    fitter = ConeFitter(1)
    for r, k in enumerate((0, 10, 20, 30)):
        assert fitter.add_point(k, r)
    before = (fitter.slope_lo, fitter.slope_hi, fitter.count)
    assert not fitter.add_point(31, 10)
    assert (fitter.slope_lo, fitter.slope_hi, fitter.count) == before


def test_cone_soundness_randomized(rng):
    eps = 8
    for _ in range(300):
        n = int(rng.integers(2, 200))
        gaps = rng.integers(1, 10 ** int(rng.integers(1, 7)), size=n)
        keys = np.cumsum(gaps).tolist()
        fitter = ConeFitter(eps)
        accepted = []
        for r, k in enumerate(keys):
            if not fitter.add_point(k, r):
                # Infeasible: no slope through the anchor keeps every point within eps.
                k0 = accepted[0][0]
                lo = max((rr - eps) / (kk - k0) for kk, rr in [*accepted[1:], (k, r)])
                hi = min((rr + eps) / (kk - k0) for kk, rr in [*accepted[1:], (k, r)])
                assert lo > hi
                break
            accepted.append((k, r))
        m = fitter.current_model()
        assert max_error(m, accepted, len(accepted)) <= eps


def test_least_squares_exact_line():
    points = [(1000 + 7 * i, i) for i in range(50)]
    m = fit_least_squares(points)
    assert m.slope == pytest.approx(1 / 7)
    assert m.epsilon == 0
    assert max_error(m, points, 50) == 0


def test_least_squares_needs_points():
    with pytest.raises(ValueError, match="at least one"):
        fit_least_squares([])


def test_rls_tracks_a_line():
    state = RlsState(origin=5000, scale=100.0)
    for i in range(64):
        state = rls_update(state, 5000 + 10 * i, i)
    assert state.count == 64
    assert state.predict(5000 + 10 * 100) == pytest.approx(100, abs=1e-3)
    assert state.model().raw(5000 + 10 * 80) == pytest.approx(80, abs=1e-3)


def test_rls_update_is_pure():
    state = RlsState()
    new = rls_update(state, 3, 1)
    assert state.count == 0
    assert new.count == 1


def test_least_squares_small_cases():
    m = fit_least_squares([(0, 0), (1, 0), (2, 3)])
    assert m.slope == pytest.approx(1.5)
    assert m.intercept == pytest.approx(-0.5)
    assert m.origin == 0
    assert m.epsilon == 1
    m = fit_least_squares([(5, 7)])
    assert (m.slope, m.intercept, m.origin, m.epsilon) == (0.0, 7.0, 5, 0)


def test_cone_rejects_a_rank_jump():
    fitter = ConeFitter(4)
    assert fitter.add_point(0, 0)
    assert fitter.add_point(1, 1)
    assert not fitter.add_point(2, 100)
    assert fitter.count == 2


def test_rls_matches_batch_least_squares(rng):
    keys = rng.integers(0, 10**6, size=1000).tolist()
    ranks = (np.array(keys) * 1e-3 + rng.normal(0.0, 5.0, size=1000)).tolist()
    origin = min(keys)
    state = RlsState(origin=origin, scale=float(max(keys) - origin))
    for k, r in zip(keys, ranks):
        state = rls_update(state, k, r)
    batch = fit_least_squares(zip(keys, ranks))
    online = state.model()
    assert online.slope == pytest.approx(batch.slope, rel=1e-6)
    for k in (origin, 250_000, 500_000, max(keys)):
        assert online.raw(k) == pytest.approx(batch.raw(k), rel=1e-6, abs=1e-6)
