"""End-to-end acceptance checks at desk scale (d = 2).

Each test prints one PASS/FAIL line; the lines are repeated in the pytest
terminal summary.  Deselect with ``-m "not slow"`` for a quick run.
"""
import math

import numpy as np
import pytest

from kraichnan import cli
from kraichnan.diffusion import SdeConfig, exit_tail_probability, simulate_ensemble
from kraichnan.estimators import GridSpec, RadialRegion, green_density, heat_kernel_density
from kraichnan.forcing import ForcingSpec
from kraichnan.hopf import f2_at, f4_at, pair_bound
from kraichnan.symbol import SymbolParams
from kraichnan.verify import (DEFAULT_SEED, LEMMAS, check_bai, check_cross_lemma,
                              check_degeneration, check_prc, check_structure, check_symmetry,
                              check_weight, fit_exponent, fit_linear)
from kraichnan.verify import calibration, checks, suites

pytestmark = pytest.mark.slow

XIS = (0.5, 1.0, 1.5)
BALL = ForcingSpec("ball", 1.0)
P2 = SymbolParams(2, 2, 1.0)
X0 = np.array([[1.0, 0.0]])


def _fails(reports):
    return [r.name for r in reports if not r.passed]


def test_01_degeneration_set(verdict):
    reps = [check_degeneration(SymbolParams(n, 2, xi), samples=1000) for n in (3, 4) for xi in XIS]
    on = max(r.subchecks[0].max_ratio for r in reps)
    bad = _fails(reps)
    assert verdict("1 degeneration", not bad,
                   f"on-set max lambda_min/|S| = {on:.1e}; failing: {bad or 'none'}")


def test_02_symmetry(verdict):
    reps = [check_symmetry(SymbolParams(n, 2, xi), samples=1000) for n in (2, 3, 4) for xi in XIS]
    worst = max(r.max_ratio for r in reps)
    assert verdict("2 symmetry", not _fails(reps), f"max relative deviation {worst:.1e} <= 1e-12")


def test_03_f2_oracle(verdict):
    cfg = SdeConfig(P2, dt_base=0.003, t_max=100.0, dt_max=100.0, seed=DEFAULT_SEED, paths=100000)
    ok, parts = True, []
    for r in (1.5, 2.0, 4.0):
        oracle = f2_at([r, 0.0], [0.0, 0.0], BALL, P2)
        mc = f2_at([r, 0.0], [0.0, 0.0], BALL, P2, mode="mc", cfg=cfg)
        tol = max(0.1 * oracle, 3 * mc.stderr)
        ok &= abs(mc.value - oracle) <= tol
        parts.append(f"r={r:g}: {mc.value:.4f}+-{mc.stderr:.4f} vs {oracle:.4f}")
    assert verdict("3 F2 oracle", ok, "; ".join(parts))


def _heat_slope(times, cfg):
    times = list(times)
    ens = simulate_ensemble(X0, cfg.replace(t_max=times[-1]), checkpoints=times[:-1])
    grid = GridSpec(X0.reshape(1, -1))
    gs = [heat_kernel_density(X0, t, cfg, grid, ensemble=ens) for t in times]
    return fit_exponent(times, [g.values[0] for g in gs], [g.stderr[0] for g in gs])


def test_04_heat_kernel_exponents(verdict):
    small = _heat_slope(np.geomspace(1e-3, 1e-2, 5),
                        SdeConfig(P2, dt_base=2e-5, t_max=1e-2, seed=DEFAULT_SEED, paths=100000))
    large = _heat_slope(np.geomspace(10.0, 100.0, 5),
                        SdeConfig(P2, dt_base=0.005, t_max=100.0, dt_max=100.0, seed=DEFAULT_SEED,
                                  paths=100000))
    ok = abs(small.slope + 1) <= 0.15 and abs(large.slope + 2) <= 0.3
    assert verdict("4 heat kernel", ok,
                   f"slope {small.slope:.3f} on [1e-3, 1e-2], {large.slope:.3f} on [10, 100]")


def test_05_green_decay(verdict):
    cfg = SdeConfig(P2, dt_base=0.005, t_max=100.0, dt_max=100.0, seed=DEFAULT_SEED, paths=20000)
    g = green_density(X0, RadialRegion((1.0, 1.41, 2.0, 2.83, 4.0)), cfg)
    fit = fit_exponent(g.extra["profile_radius"], g.extra["profile"], g.extra["profile_stderr"])
    assert verdict("5 Green decay", abs(fit.slope + 1) <= 0.3,
                   f"slope {fit.slope:.3f} +- {fit.stderr:.3f} (target -1 +- 0.3)")


def test_06_exit_tails(verdict):
    t = 0.05
    cfg = SdeConfig(P2, dt_base=1e-3, t_max=t, seed=DEFAULT_SEED, paths=20000)
    mu = np.linspace(0.3, 1.2, 10)
    p, _ = exit_tail_probability(X0, t, mu, cfg)
    sel = p > 0
    fit = fit_linear(mu[sel] ** 2 / t, np.log(p[sel]))
    ok = fit.slope < 0 and fit.r_squared >= 0.9
    assert verdict("6 exit tails", ok, f"slope {fit.slope:.4f}, R^2 {fit.r_squared:.4f}")


def test_07_f4_pair_bound(verdict):
    p4 = SymbolParams(4, 2, 1.0)
    cfg = SdeConfig(p4, dt_base=0.01, t_max=100.0, dt_max=100.0, seed=DEFAULT_SEED, paths=10000)
    ratios, errs = [], []
    for r in (2.0, 4.0, 8.0):
        y = np.array([[0.0, 0.0], [1.0, 0.0], [0.0, r], [1.0, r]])
        res = f4_at(y, BALL, cfg)
        pb = pair_bound(y, p4)
        ratios.append(res.total / pb)
        errs.append(res.stderr / pb)
    # far apart the two unit pairs decouple: F4 -> F2(1)^2 while the pair bound -> 2^-2,
    # so the ratio has a finite large-r limit that it must not overshoot
    limit = f2_at([1.0, 0.0], [0.0, 0.0], BALL, P2) ** 2 / 0.25
    spread = max(ratios) / min(ratios)
    bounded = all(q <= limit + 3 * e for q, e in zip(ratios, errs))
    ok = spread < 3 and bounded
    assert verdict("7 F4 pair bound", ok,
                   "ratios " + ", ".join(f"{q:.3f}+-{e:.3f}" for q, e in zip(ratios, errs))
                   + f"; spread {spread:.2f}; large-r limit {limit:.3f}")


def test_08_cross_lemmas(verdict):
    reps = []
    for xi in XIS:
        for lemma in LEMMAS:
            n = checks.LEMMA_DEFAULT_N[lemma]
            reps.append(check_cross_lemma(lemma, SymbolParams(n, 2, xi), samples=10000))
    seeds_differ = all(r.seed != calibration.CALIBRATION_SEED for r in reps)
    bad = _fails(reps)
    assert verdict("8 cross-term lemmas", not bad and seeds_differ,
                   f"{len(reps) - len(bad)}/{len(reps)} within frozen E; "
                   f"seed {DEFAULT_SEED} vs calibration {calibration.CALIBRATION_SEED}")


def test_09_structure(verdict):
    reps = [check_structure(np.array(pt), SymbolParams(n, 2, xi))
            for _, n, pt in suites.STRUCTURE_POINTS for xi in XIS]
    worst = max(r.max_ratio / r.calibrated_constant for r in reps)
    assert verdict("9 structure", not _fails(reps), f"worst ratio/lambda {worst:.3f}")


def test_10_weights_and_quadrature(verdict):
    reps = []
    for xi in XIS:
        p3 = SymbolParams(3, 2, xi)
        reps.append(check_weight([np.eye(4)], xi, label="origin4"))
        reps.append(check_weight(checks.degeneration_constraints(p3), xi, label="dgn3"))
        reps.append(check_bai(1, 2, xi))
        reps.append(check_bai(2, 2, xi))
        reps.append(check_prc(2, 2, xi))
    from kraichnan.verify.quadrature import bai_lhs_l1
    two_pi = abs(bai_lhs_l1(0.0, 2, 1.0) - 2 * math.pi)
    bad = _fails(reps)
    assert verdict("10 weights and quadrature", not bad and two_pi <= 1e-6,
                   f"{len(reps) - len(bad)}/{len(reps)} checks; |LHS(0) - 2 pi| = {two_pi:.1e}")


def test_11_reproducibility(tmp_path, verdict):
    base = ["--seed", "424242", "--set", "sde.paths=3000", "--set", "sde.t_max=5",
            "--set", "sde.dt_max=1", "--set", "sde.dt_base=0.01"]
    runs = [("simulate", "endpoints.csv", []),
            ("green", "green.csv", ["--set", "green.edges=[1, 2, 4]"]),
            ("heat", "heat.csv", ["--set", "heat.times=[1, 2, 5]"]),
            ("verify", "reports.json", ["degeneration"])]
    same = []
    for cmd, artifact, extra in runs:
        blobs = []
        for workers in (1, 3, 8):
            out = tmp_path / f"{cmd}-{workers}"
            args = [cmd] + extra + base + ["--workers", str(workers), "--out", str(out)]
            assert cli.main(args) == 0
            blobs.append((out / artifact).read_bytes())
        same.append(all(b == blobs[0] for b in blobs))
    assert verdict("11 reproducibility", all(same),
                   ", ".join(f"{c}: {'identical' if s else 'DIFFERENT'}"
                             for (c, _, _), s in zip(runs, same)) + " across workers 1/3/8")
