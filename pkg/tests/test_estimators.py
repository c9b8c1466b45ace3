import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from kraichnan.diffusion import Observable, SdeConfig, simulate_ensemble
from kraichnan.estimators import (DivergenceWarning, F2Evaluator, GreenSample,
                                  InsufficientDataError, RadialRegion, batch_bootstrap,
                                  batch_sums, bootstrap_stderr, box_grid, envelope_E, estimate_E,
                                  estimate_En, green_apply, green_checkpoints, green_density,
                                  green_from_ensemble, heat_kernel_density, radial_f2_oracle,
                                  semigroup_apply)
from kraichnan.forcing import ForcingSpec
from kraichnan.symbol import SymbolError, SymbolParams
from kraichnan.verify.report import fit_exponent

P2 = SymbolParams(2, 2, 1.0)
BALL = ForcingSpec("ball", 1.0)
X0 = np.array([[1.0, 0.0]])


def cfg(**kw):
    base = dict(params=P2, dt_base=1e-3, t_max=0.05, seed=9, paths=2000)
    base.update(kw)
    return SdeConfig(**base)


class TestOracle:
    @pytest.mark.parametrize("r,value", [(2.0, 0.25), (1.5, 1 / 3), (4.0, 0.125)])
    def test_ball_values(self, r, value):
        assert radial_f2_oracle(r, BALL, P2) == pytest.approx(value, rel=1e-9)
        assert float(F2Evaluator(BALL, P2)(np.array(r))) == pytest.approx(value, rel=1e-12)

    def test_power_law_tail(self):
        r = np.geomspace(1, 8, 8)
        vals = np.array([radial_f2_oracle(v, BALL, P2) for v in r])
        fit = fit_exponent(r, vals)
        assert fit.slope == pytest.approx(-1.0, abs=1e-6)
        assert fit.r_squared == pytest.approx(1.0, abs=1e-12)

    @pytest.mark.parametrize("xi", [0.5, 1.5])
    def test_tail_exponent(self, xi):
        p = SymbolParams(2, 2, xi)
        r = np.array([2.0, 4.0, 8.0, 16.0])
        vals = [radial_f2_oracle(v, BALL, p) for v in r]
        assert fit_exponent(r, vals, min_points=3).slope == pytest.approx(-xi, abs=1e-6)

    def test_closed_form_matches_quadrature_inside(self):
        f = F2Evaluator(BALL, P2)
        for r in (0.0, 0.3, 0.9):
            assert float(f(np.array(r))) == pytest.approx(radial_f2_oracle(r, BALL, P2), rel=1e-8)

    def test_bump_monotone_and_decays(self):
        bump = ForcingSpec("bump", 1.0)
        f = F2Evaluator(bump, P2)
        r = np.linspace(0, 50, 400)
        v = f(r)
        assert np.all(np.diff(v) <= 1e-12)
        assert v[-1] < 0.01 * v[0]
        for s in (0.2, 0.7, 3.0):
            assert float(f(np.array(s))) == pytest.approx(radial_f2_oracle(s, bump, P2), rel=1e-6)

    def test_requires_pair(self):
        with pytest.raises(SymbolError):
            radial_f2_oracle(1.0, BALL, SymbolParams(3, 2, 1.0))


class TestResampling:
    def test_bootstrap_matches_classical(self):
        x = np.random.default_rng(0).standard_normal(4000)
        se = bootstrap_stderr(x, seed=1)
        assert se == pytest.approx(x.std(ddof=1) / math.sqrt(x.size), rel=0.1)

    def test_batch_bootstrap(self):
        x = np.random.default_rng(1).exponential(size=(5000, 2))
        sums, sizes = batch_sums(x)
        assert sums.shape == (100, 2) and sizes.sum() == 5000
        np.testing.assert_allclose(sums.sum(axis=0), x.sum(axis=0))
        se = batch_bootstrap(sums, sizes, seed=2)
        # 100 batches pin the standard error down to roughly 10%
        np.testing.assert_allclose(se, x.std(axis=0, ddof=1) / math.sqrt(5000), rtol=0.3)


class TestHeatKernel:
    def test_concentration_at_small_time(self):
        c = cfg(dt_base=1e-7, adapt_floor=1e-8, t_max=1e-6)
        grid = box_grid(X0[0], 0.2, 9)
        g = heat_kernel_density(X0, 1e-6, c, grid)
        at = g.values[np.argmin(np.sum((grid.centers - X0[0]) ** 2, axis=1))]
        far = np.linalg.norm(grid.centers - X0[0], axis=1) > 0.1
        assert at > 10 * g.values[far].max()

    def test_mass_at_most_one(self):
        c = cfg(t_max=0.01, dt_base=1e-3, paths=4000)
        g = heat_kernel_density(X0, 0.01, c, box_grid(X0[0], 1.0, 41))
        assert g.extra["mass"] <= 1 + 3 * g.extra["mass_stderr"] + 0.01
        assert g.extra["mass"] > 0.9

    def test_needs_paths_near_grid(self):
        with pytest.raises(InsufficientDataError):
            heat_kernel_density(X0, 0.05, cfg(), box_grid([40.0, 40.0], 0.1, 3))

    def test_grid_dimension(self):
        with pytest.raises(SymbolError):
            heat_kernel_density(X0, 0.05, cfg(), np.zeros((2, 3)))


class TestSemigroup:
    def test_constants(self):
        c = cfg(paths=500)
        one = semigroup_apply(lambda b: np.ones(b.shape[0]), X0, 0.05, c)
        assert one.value == 1.0 and one.stderr == 0.0
        zero = semigroup_apply(lambda b: np.zeros(b.shape[0]), X0, 0.05, c)
        assert zero.value == 0.0

    @given(st.floats(0.1, 3.0))
    def test_positivity(self, a):
        ens = simulate_ensemble(X0, cfg(paths=300))
        v = semigroup_apply(lambda b: np.exp(-a * np.sum(b[:, 0] ** 2, axis=-1)), X0, 0.05,
                            cfg(paths=300), ensemble=ens)
        assert v.value >= 0


class TestGreen:
    def test_zero_forcing(self):
        g = green_apply(Observable(lambda b: np.zeros(b.shape[0]), key="zero"), X0,
                        cfg(t_max=1.0, dt_max=0.1, dt_base=0.01))
        assert g.value == 0.0 and g.tail_bound == 0.0

    def test_linearity(self):
        c = cfg(t_max=5.0, dt_base=0.01, dt_max=0.2, paths=1000)
        chi = lambda b: BALL(b[:, 0, :])
        a = green_apply(Observable(chi, key="chi"), X0, c)
        b = green_apply(Observable(lambda x: 2.5 * chi(x), key="chi2.5"), X0, c)
        assert b.value == pytest.approx(2.5 * a.value, rel=1e-12)
        assert b.stderr == pytest.approx(2.5 * a.stderr, rel=1e-9)

    def test_divergent_tail_is_reported(self):
        c = cfg(t_max=2.0, dt_base=0.01, dt_max=0.1, paths=200)
        ens = simulate_ensemble(X0, c, [Observable(lambda b: np.ones(b.shape[0]))],
                                checkpoints=green_checkpoints(2.0))
        with pytest.warns(DivergenceWarning):
            g = green_from_ensemble(ens, 0, c)
        assert math.isnan(g.value) and math.isinf(g.tail_bound)

    def test_sample_total(self):
        assert GreenSample(1.0, 0.1, 10.0, 0.25).total == 1.25

    def test_far_region_empty(self):
        c = cfg(t_max=1.0, dt_base=0.01, dt_max=0.1, paths=500)
        g = green_density(X0, RadialRegion((50.0, 60.0)), c, min_paths=0)
        assert np.all(g.values == 0)
        with pytest.raises(InsufficientDataError):
            green_density(X0, RadialRegion((50.0, 60.0)), c)

    def test_mirror_symmetry(self):
        c = cfg(t_max=5.0, dt_base=0.01, dt_max=0.5, paths=4000)
        region = RadialRegion((0.5, 1.0, 2.0), nangle=4)
        g = green_density(X0, region, c)
        v = g.values.reshape(2, 4)
        s = g.stderr.reshape(2, 4)
        for k in range(2):
            diff = np.abs(v[:, k] - v[:, 3 - k])
            assert np.all(diff <= 3 * np.hypot(s[:, k], s[:, 3 - k]) + 1e-12)


class TestEnvelopes:
    def test_examples(self):
        assert float(envelope_E(1.0, np.zeros(2), np.zeros(2), 1.0, 2, 1.0)) == pytest.approx(1.0)
        x = np.array([1.0, 0.0])
        assert float(envelope_E(0.5, x, x, 3.0, 2, 1.0)) == pytest.approx(3.0 * 0.5 ** -2)

    @given(st.floats(0.01, 10), st.floats(0.0, 5.0), st.floats(0.0, 5.0))
    def test_monotone_in_distance(self, t, a, b):
        lo, hi = sorted((a, b))
        x = np.array([1.0, 0.0])
        # far branch: |y| >= |x|/2 holds along this ray
        y1, y2 = x + np.array([lo, 0.0]), x + np.array([hi, 0.0])
        assert envelope_E(t, x, y2, 2.0, 2, 1.0) <= envelope_E(t, x, y1, 2.0, 2, 1.0)
        # local branch: y = s e2 with s < 1/2 keeps |y| < |x|/2, and |x - y| grows with s
        s1, s2 = lo / 11, hi / 11
        e1 = envelope_E(t, x, np.array([0.0, s1]), 2.0, 2, 1.0)
        e2 = envelope_E(t, x, np.array([0.0, s2]), 2.0, 2, 1.0)
        assert e2 <= e1

    def test_split_envelope(self):
        p = SymbolParams(3, 2, 1.0)
        x = np.zeros((2, 2))
        assert estimate_E(2.0, x, x, 1.0, p, split=1) == pytest.approx(2.0 ** (-2 - 1))
        with pytest.raises(ValueError):
            estimate_E(1.0, x, x, 1.0, p, split=3)

    def test_time_integral(self):
        # one block, x = e1, y = 3 e1 (far branch): int C t^-2 exp(-2/(C t)) dt = C^2 / 2
        v = estimate_En(np.array([[1.0, 0.0]]), np.array([[3.0, 0.0]]), 1.5, P2)
        assert v == pytest.approx(1.5 ** 2 / 2, rel=1e-6)
