import os

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from kraichnan import diffusion
from kraichnan.diffusion import (CacheCorruptionError, EngineError, Observable, SdeConfig,
                                 adaptive_dt, drift, exit_tail_probability, noise_factor,
                                 simulate_ensemble)
from kraichnan.symbol import SingularityError, SymbolParams, assemble_symbol, symbol_batch

P2 = SymbolParams(2, 2, 1.0)
xis = st.sampled_from([0.5, 1.0, 1.5])


def fd_drift(x, params, h=1e-6):
    """b_j = sum_i d/dx_i A_ij by central differences of the assembled symbol."""
    flat = x.reshape(-1)
    D = flat.size
    out = np.zeros(D)
    for i in range(D):
        e = np.zeros(D)
        e[i] = h
        Ap = symbol_batch((flat + e).reshape(x.shape), params)
        Am = symbol_batch((flat - e).reshape(x.shape), params)
        out += (Ap[i] - Am[i]) / (2 * h)
    return out


class TestDrift:
    @given(arrays(float, (1, 2), elements=st.floats(-3, 3)), xis)
    def test_pair_drift_vanishes(self, x, xi):
        if np.linalg.norm(x) < 1e-3:
            return
        assert np.max(np.abs(drift(x, SymbolParams(2, 2, xi)))) <= 1e-12 * max(1, np.linalg.norm(x) ** (xi - 1))

    @pytest.mark.parametrize("n,xi", [(3, 1.0), (4, 0.5), (4, 1.5), (5, 1.0)])
    def test_finite_difference(self, n, xi):
        g = np.random.default_rng(n)
        p = SymbolParams(n, 2, xi)
        for _ in range(5):
            x = g.standard_normal((n - 1, 2))
            # the drift is identically zero, so compare on an absolute scale
            scale = np.abs(symbol_batch(x, p)).max()
            assert np.max(np.abs(drift(x, p) - fd_drift(x, p))) <= 1e-5 * scale

    def test_homogeneity(self):
        p = SymbolParams(4, 2, 1.5)
        x = np.random.default_rng(0).standard_normal((3, 2))
        np.testing.assert_allclose(drift(3 * x, p), 3 ** 0.5 * drift(x, p), atol=1e-12)

    def test_singular_start(self):
        with pytest.raises(SingularityError):
            drift(np.array([[1.0, 0.0], [-1.0, 0.0]]), SymbolParams(3, 2, 1.0))


class TestNoise:
    def test_example(self):
        np.testing.assert_allclose(noise_factor(np.array([[1.0, 0.0]]), P2),
                                   np.diag([np.sqrt(2), 2.0]), atol=1e-14)

    @settings(max_examples=60)
    @given(st.integers(2, 4), xis, st.integers(0, 10 ** 6))
    def test_square_root(self, n, xi, seed):
        p = SymbolParams(n, 2, xi)
        x = np.random.default_rng(seed).standard_normal((n - 1, 2))
        S = noise_factor(x, p)
        A = assemble_symbol(x, p).entries
        np.testing.assert_allclose(S, S.T, atol=1e-12)
        np.testing.assert_allclose(S @ S.T, 2 * A, atol=1e-10 * max(1, np.abs(A).max()))

    @pytest.mark.parametrize("x", [[[0.0, 0.0], [1.0, 0.0]], [[1.0, 2.0], [-1.0, -2.0]]])
    def test_rank_deficient_on_degeneration_set(self, x):
        S = noise_factor(np.array(x), SymbolParams(3, 2, 1.0))
        sv = np.linalg.svd(S, compute_uv=False)
        assert np.sum(sv < 1e-7 * sv.max()) >= 2


class TestAdaptiveStep:
    def test_examples(self):
        cfg = SdeConfig(P2, dt_base=1e-2, t_max=1.0, adapt_floor=1e-6)
        assert adaptive_dt(np.array([[2.0, 0.0]]), cfg) == pytest.approx(1e-2)
        assert adaptive_dt(np.array([[0.1, 0.0]]), cfg) == pytest.approx(1e-3)
        assert adaptive_dt(np.array([[0.0, 0.0]]), cfg) == 1e-6

    def test_relative_stepping(self):
        cfg = SdeConfig(P2, dt_base=1e-2, t_max=1.0, dt_max=1.0)
        assert adaptive_dt(np.array([[10.0, 0.0]]), cfg) == pytest.approx(0.1)
        assert adaptive_dt(np.array([[1e3, 0.0]]), cfg) == pytest.approx(1.0)

    def test_config_validation(self):
        with pytest.raises(ValueError):
            SdeConfig(P2, dt_base=1e-2, t_max=1.0, dt_max=1e-3)
        with pytest.raises(ValueError):
            SdeConfig(P2, dt_base=1e-2, t_max=1.0, adapt_floor=1.0)
        with pytest.raises(ValueError):
            SdeConfig(P2, dt_base=1e-2, t_max=1.0, seed=-3)


def _cfg(**kw):
    base = dict(params=P2, dt_base=1e-3, t_max=0.05, seed=3, paths=400)
    base.update(kw)
    return SdeConfig(**base)


class TestEngine:
    def test_zero_observable(self):
        obs = Observable(lambda b: np.zeros(b.shape[0]), key="zero")
        ens = simulate_ensemble(np.array([[1.0, 0.0]]), _cfg(), [obs])
        assert np.all(ens.occupation == 0)

    def test_unit_observable_gives_time(self):
        obs = Observable(lambda b: np.ones(b.shape[0]), key="one")
        ens = simulate_ensemble(np.array([[1.0, 0.0]]), _cfg(), [obs], checkpoints=[0.02])
        np.testing.assert_allclose(ens.occupation[:, 0], 0.05, rtol=1e-12)
        np.testing.assert_allclose(ens.occupation_history[0, :, 0], 0.02, rtol=1e-9)

    def test_worker_count_and_chunking_invariance(self, monkeypatch):
        cfg = _cfg(params=SymbolParams(3, 2, 1.0), paths=300)
        x0 = np.array([[1.0, 0.0], [0.0, 1.0]])
        ref = simulate_ensemble(x0, cfg)
        monkeypatch.setattr(diffusion, "CHUNK", 37)
        one = simulate_ensemble(x0, cfg, workers=1)
        eight = simulate_ensemble(x0, cfg, workers=8)
        np.testing.assert_array_equal(ref.endpoints, one.endpoints)
        np.testing.assert_array_equal(one.endpoints, eight.endpoints)
        np.testing.assert_array_equal(one.sup_distance, eight.sup_distance)

    def test_seed_changes_paths(self):
        x0 = np.array([[1.0, 0.0]])
        a = simulate_ensemble(x0, _cfg(seed=1)).endpoints
        b = simulate_ensemble(x0, _cfg(seed=2)).endpoints
        assert not np.array_equal(a, b)

    def test_mean_displacement_matches_drift(self):
        # the drift vanishes, so the mean displacement is zero up to noise
        p = SymbolParams(3, 2, 1.0)
        x0 = np.array([[1.0, 0.0], [0.0, 1.0]])
        ens = simulate_ensemble(x0, _cfg(params=p, paths=4000, t_max=0.01))
        disp = (ens.endpoints - x0).reshape(ens.paths, -1)
        expect = 0.01 * drift(x0, p)
        se = disp.std(axis=0, ddof=1) / np.sqrt(ens.paths)
        assert np.all(np.abs(disp.mean(axis=0) - expect) <= 4 * se)

    def test_covariance_at_small_time(self):
        x0 = np.array([[1.0, 0.0]])
        t = 1e-3
        ens = simulate_ensemble(x0, _cfg(paths=20000, t_max=t, dt_base=1e-4))
        cov = np.cov((ens.endpoints - x0).reshape(ens.paths, -1).T)
        np.testing.assert_allclose(cov, 2 * t * np.diag([1.0, 2.0]), rtol=0.05, atol=2e-5)

    def test_start_on_degeneration_set(self):
        with pytest.raises(SingularityError):
            simulate_ensemble(np.array([[0.0, 0.0], [1.0, 0.0]]), _cfg(params=SymbolParams(3, 2, 1.0)))

    def test_checkpoints_validated(self):
        with pytest.raises(ValueError):
            simulate_ensemble(np.array([[1.0, 0.0]]), _cfg(), checkpoints=[1.0])

    def test_snapshot_lookup(self):
        ens = simulate_ensemble(np.array([[1.0, 0.0]]), _cfg(), checkpoints=[0.01])
        assert ens.snapshot(0.01).shape == (400, 1, 2)
        with pytest.raises(EngineError):
            ens.snapshot(0.02)


class TestCache:
    def test_roundtrip(self, tmp_path):
        obs = Observable(lambda b: b[:, 0, 0] ** 2, key="x0sq")
        x0 = np.array([[1.0, 0.0]])
        a = simulate_ensemble(x0, _cfg(), [obs], cache=str(tmp_path))
        files = list(tmp_path.glob("*.npz"))
        assert len(files) == 1
        b = simulate_ensemble(x0, _cfg(), [obs], cache=str(tmp_path))
        np.testing.assert_array_equal(a.endpoints, b.endpoints)
        np.testing.assert_array_equal(a.occupation, b.occupation)
        # worker count is not part of the key
        c = simulate_ensemble(x0, _cfg(), [obs], cache=str(tmp_path), workers=4)
        assert len(list(tmp_path.glob("*.npz"))) == 1
        np.testing.assert_array_equal(a.endpoints, c.endpoints)

    def test_environment_variable(self, tmp_path, monkeypatch):
        monkeypatch.setenv(diffusion.CACHE_ENV, str(tmp_path))
        simulate_ensemble(np.array([[1.0, 0.0]]), _cfg())
        assert len(list(tmp_path.glob("*.npz"))) == 1

    def test_corruption_is_fatal(self, tmp_path):
        x0 = np.array([[1.0, 0.0]])
        simulate_ensemble(x0, _cfg(), cache=str(tmp_path))
        path = next(tmp_path.glob("*.npz"))
        with np.load(path) as f:
            arrays = {k: f[k] for k in f.files}
        arrays["endpoints"] = arrays["endpoints"] + 1e-9
        with open(path, "wb") as fh:
            np.savez(fh, **arrays)
        with pytest.raises(CacheCorruptionError):
            simulate_ensemble(x0, _cfg(), cache=str(tmp_path))
        path.write_bytes(b"garbage")
        with pytest.raises(CacheCorruptionError):
            simulate_ensemble(x0, _cfg(), cache=str(tmp_path))

    def test_unkeyed_observable_skips_cache(self, tmp_path):
        obs = Observable(lambda b: np.ones(b.shape[0]))
        simulate_ensemble(np.array([[1.0, 0.0]]), _cfg(), [obs], cache=str(tmp_path))
        assert not list(tmp_path.glob("*.npz"))


class TestExitTail:
    def test_bounds(self):
        cfg = _cfg(paths=2000)
        mu = np.array([0.01, 0.1, 0.3, 100.0])
        p, se = exit_tail_probability(np.array([[1.0, 0.0]]), 0.05, mu, cfg)
        assert np.all((p >= 0) & (p <= 1))
        assert p[-1] == 0.0 and p[0] == 1.0
        assert np.all(np.diff(p) <= 0)
        assert np.all(se >= 0)

    def test_invalid(self):
        with pytest.raises(ValueError):
            exit_tail_probability(np.array([[1.0, 0.0]]), 0.05, [-1.0], _cfg())
