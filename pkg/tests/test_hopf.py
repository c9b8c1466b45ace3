import math
from itertools import permutations

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from kraichnan.diffusion import SdeConfig
from kraichnan.forcing import ForcingSpec
from kraichnan.hopf import (DepthError, InterpolatedF4, MAX_POINTS, OracleF2, f2_at,
                            f2n_recursive, f4_at, lift_batch, pair_bound, pair_bound_terms,
                            pairings)
from kraichnan.symbol import SymbolParams, lift

P2 = SymbolParams(2, 2, 1.0)
P4 = SymbolParams(4, 2, 1.0)
BALL = ForcingSpec("ball", 1.0)
SQUARE = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, 2.0], [1.0, 2.0]])


def quick_cfg(n=4, **kw):
    base = dict(params=SymbolParams(n, 2, 1.0), dt_base=0.02, t_max=20.0, dt_max=20.0,
                seed=4, paths=1500)
    base.update(kw)
    return SdeConfig(**base)


class TestPairings:
    @pytest.mark.parametrize("k,count", [(0, 1), (2, 1), (4, 3), (6, 15), (8, 105)])
    def test_counts(self, k, count):
        ps = list(pairings(range(k)))
        assert len(ps) == count
        assert len({tuple(p) for p in ps}) == count
        for p in ps:
            assert sorted(i for pr in p for i in pr) == list(range(k))

    def test_odd_rejected(self):
        with pytest.raises(ValueError):
            list(pairings(range(3)))


class TestPairBound:
    def test_coincident_points(self):
        assert pair_bound(np.zeros((4, 2)), P4) == 3.0

    def test_single_pair(self):
        assert pair_bound(np.array([[0.0, 0.0], [1.0, 0.0]]), P2) == pytest.approx(0.5)

    def test_terms(self):
        terms = pair_bound_terms(SQUARE, P4)
        assert len(terms.terms) == 3
        assert terms.total == pytest.approx(sum(terms.terms))

    @given(arrays(float, (4, 2), elements=st.floats(-5, 5)), st.integers(0, 3),
           st.floats(0.0, 5.0))
    def test_monotone_in_one_separation(self, y, k, step):
        # move point k away from all others along a direction they all lie behind
        far = y.copy()
        far[k] = y[k] + np.array([1.0, 0.0]) * step
        if np.all(np.linalg.norm(far[k] - np.delete(y, k, axis=0), axis=1)
                  >= np.linalg.norm(y[k] - np.delete(y, k, axis=0), axis=1) - 1e-12):
            assert pair_bound(far, P4) <= pair_bound(y, P4) + 1e-12


class TestTwoPoint:
    def test_oracle_value(self):
        assert f2_at([2.0, 0.0], [0.0, 0.0], BALL, P2) == pytest.approx(0.25)

    @given(arrays(float, 2, elements=st.floats(-10, 10)))
    def test_translation_invariance(self, a):
        y1, y2 = np.array([0.3, 1.1]), np.array([-0.5, 0.2])
        assert f2_at(y1 + a, y2 + a, BALL, P2) == pytest.approx(f2_at(y1, y2, BALL, P2), rel=1e-9)

    def test_mc_agrees_with_oracle(self):
        cfg = quick_cfg(2, paths=6000, t_max=100.0, dt_max=100.0, dt_base=0.01)
        mc = f2_at([2.0, 0.0], [0.0, 0.0], BALL, P2, mode="mc", cfg=cfg)
        assert abs(mc.value - 0.25) <= 3 * mc.stderr + 0.025

    def test_bad_mode(self):
        with pytest.raises(ValueError):
            f2_at([1, 0], [0, 0], BALL, P2, mode="magic")
        with pytest.raises(ValueError):
            f2_at([1, 0], [0, 0], BALL, P2, mode="mc")

    def test_oracle_evaluator(self):
        pts = np.array([[[2.0, 0.0], [0.0, 0.0]], [[0.0, 4.0], [0.0, 0.0]]])
        np.testing.assert_allclose(OracleF2(BALL, P2)(pts), [0.25, 0.125])


class TestRecursion:
    def test_base_case(self):
        y = np.array([[1.5, 0.0], [0.0, 0.0]])
        assert f2n_recursive(y, BALL, quick_cfg(2)) == f2_at(y[0], y[1], BALL, P2)

    def test_odd_rejected(self):
        with pytest.raises(ValueError):
            f2n_recursive(np.zeros((3, 2)), BALL, quick_cfg(3))

    def test_depth_guard(self):
        with pytest.raises(DepthError):
            f2n_recursive(np.arange(16.0).reshape(8, 2), BALL, quick_cfg(), max_points=6)
        with pytest.raises(DepthError):
            f2n_recursive(np.arange(16.0).reshape(8, 2), BALL, quick_cfg(), max_points=8)
        assert MAX_POINTS == 6

    def test_six_points_need_lower_level(self):
        with pytest.raises(ValueError):
            f2n_recursive(np.arange(12.0).reshape(6, 2), BALL, quick_cfg())

    def test_four_points(self):
        cfg = quick_cfg()
        a = f4_at(SQUARE, BALL, cfg)
        b = f2n_recursive(SQUARE, BALL, cfg)
        assert a.value == b.value and a.stderr == b.stderr
        assert a.value >= 0 and a.total >= a.value
        assert len(a.terms) == 6

    def test_permutation_symmetry(self):
        cfg = quick_cfg()
        ref = f4_at(SQUARE, BALL, cfg)
        for perm in [(1, 0, 2, 3), (2, 3, 0, 1), (3, 1, 2, 0)]:
            other = f4_at(SQUARE[list(perm)], BALL, cfg)
            tol = 3 * math.hypot(ref.stderr, other.stderr) + 0.05 * ref.total
            assert abs(other.total - ref.total) <= tol


class TestInterpolation:
    def test_symmetric_features(self):
        g = np.random.default_rng(0)
        y = g.standard_normal((4, 2))
        f = InterpolatedF4.features(y)
        for perm in permutations(range(4)):
            np.testing.assert_allclose(InterpolatedF4.features(y[list(perm)]), f, atol=1e-12)

    def test_reproduces_nodes(self):
        g = np.random.default_rng(1)
        pts = g.standard_normal((30, 4, 2)) * 3
        vals = np.array([pair_bound(p, P4) for p in pts])
        F = InterpolatedF4(pts, vals)
        np.testing.assert_allclose(F(pts), vals, rtol=1e-6, atol=1e-9)


def test_lift_batch_matches_lift():
    b = np.random.default_rng(2).standard_normal((5, 3, 2))
    out = lift_batch(b)
    for i in range(5):
        np.testing.assert_allclose(out[i], lift(b[i]))
