"""Stationary 2n-point functions by the Green's-function recursion.

F_2 comes from the radial oracle (or a Monte Carlo Green estimate); F_{2n}
applies the Green's operator of M_{2n} to the sum over pairs (i, j) of
F_{2n-2}(other points) * chi(y_i - y_j).
"""
from dataclasses import dataclass, field
from itertools import combinations
import math

import numpy as np

from .diffusion import Observable, simulate_ensemble
from .estimators import (F2Evaluator, GreenSample, MCValue, bootstrap_stderr,
                         green_apply, green_checkpoints, green_from_ensemble,
                         _resample_seed)
from .forcing import ForcingSpec
from .symbol import SymbolError, SymbolParams, translation_reduce, degeneration_distance

MAX_POINTS = 6


class DepthError(ValueError):
    pass


def pairings(items):
    """All perfect matchings of ``items`` as lists of pairs."""
    items = list(items)
    if len(items) % 2:
        raise ValueError("perfect matchings need an even number of items")
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for k, other in enumerate(rest):
        for tail in pairings(rest[:k] + rest[k + 1:]):
            yield [(first, other)] + tail


@dataclass(frozen=True)
class PairingSum:
    pairings: tuple
    terms: tuple

    @property
    def total(self):
        return float(sum(self.terms))


def pair_bound_terms(y, params):
    y = np.asarray(y, dtype=float)
    if y.shape[0] % 2:
        raise ValueError("pair bound needs an even number of points")
    expo = 2 - params.xi - params.d
    ps, ts = [], []
    for pr in pairings(range(y.shape[0])):
        term = 1.0
        for i, j in pr:
            term *= (1.0 + float(np.linalg.norm(y[i] - y[j]))) ** expo
        ps.append(tuple(pr))
        ts.append(term)
    return PairingSum(tuple(ps), tuple(ts))


def pair_bound(y, params):
    """Sum over perfect matchings of prod (1 + |y_i - y_j|)^(2 - xi - d)."""
    return pair_bound_terms(y, params).total


def lift_batch(b):
    """Points with y_n = 0 from reduced blocks, (P, n-1, d) -> (P, n, d)."""
    P, m, d = b.shape
    y = np.zeros((P, m + 1, d))
    for i in range(m - 1, -1, -1):
        y[:, i] = y[:, i + 1] + b[:, i]
    return y


class OracleF2:
    """Lower-level evaluator for 2 points: the exact F_2 of |p_0 - p_1|."""

    def __init__(self, forcing, params):
        self.forcing = forcing
        self._f = F2Evaluator(forcing, params)
        self.key = f"oracleF2:{forcing.kind}:{forcing.radius}"
        self.points = 2

    def __call__(self, pts):
        diff = pts[:, 0] - pts[:, 1]
        return self._f(np.sqrt(np.sum(diff * diff, axis=-1)))


class InterpolatedF4:
    """F_4 interpolated from a table of Monte Carlo values.

    Features are the six pairwise distances, sorted (F_4 is symmetric under
    permutations), on a log(1 + r) scale; the interpolant is a thin-plate RBF.
    """

    def __init__(self, points, values, key="tableF4", smoothing=0.0):
        from scipy.interpolate import RBFInterpolator
        feats = self.features(np.asarray(points, dtype=float))
        self._rbf = RBFInterpolator(feats, np.asarray(values, dtype=float),
                                    kernel="thin_plate_spline", smoothing=smoothing)
        self.key = key
        self.points = 4

    @staticmethod
    def features(pts):
        pts = np.asarray(pts, dtype=float)
        if pts.ndim == 2:
            pts = pts[None]
        cols = []
        for i, j in combinations(range(4), 2):
            cols.append(np.sqrt(np.sum((pts[:, i] - pts[:, j]) ** 2, axis=-1)))
        f = np.sort(np.stack(cols, axis=1), axis=1)
        return np.log1p(f)

    def __call__(self, pts):
        return np.maximum(self._rbf(self.features(pts)), 0.0)


def _pair_observable(i, j, npts, forcing, lower):
    others = [k for k in range(npts) if k not in (i, j)]

    def fn(b):
        y = lift_batch(b)
        chi = forcing(y[:, i] - y[:, j])
        out = np.zeros(b.shape[0])
        nz = chi > 0
        if np.any(nz):
            out[nz] = chi[nz] * lower(y[nz][:, others])
        return out

    return Observable(fn, key=f"pair:{i},{j}:{forcing.kind}:{forcing.radius}:{lower.key}")


@dataclass
class HopfResult:
    value: float
    stderr: float
    tail_bound: float
    terms: dict = field(default_factory=dict)

    @property
    def total(self):
        return self.value + self.tail_bound


def f2_at(y1, y2, forcing, params, mode="oracle", cfg=None, workers=1, cache=None):
    """F_2(|y1 - y2|); mode 'mc' estimates it with green_apply (needs cfg)."""
    p2 = params.with_n(2)
    y1 = np.asarray(y1, dtype=float)
    y2 = np.asarray(y2, dtype=float)
    r = float(np.linalg.norm(y1 - y2))
    if mode == "oracle":
        return float(F2Evaluator(forcing, p2)(np.array(r)))
    if mode != "mc":
        raise ValueError("mode must be 'oracle' or 'mc'")
    if cfg is None:
        raise ValueError("mc mode needs an SdeConfig")
    if cfg.params != p2:
        cfg = cfg.replace(params=p2)
    obs = Observable(lambda b: forcing(b[:, 0, :]), key=f"chi:{forcing.kind}:{forcing.radius}")
    gs = green_apply(obs, (y1 - y2)[None, :], cfg, workers=workers, cache=cache)
    return MCValue(gs.total, gs.stderr)


def f2n_recursive(y, forcing, cfg, lower=None, max_points=MAX_POINTS, workers=1, cache=None):
    """One step of the recursion for 2n points y (shape (2n, d)).

    For 2n = 2 this is the oracle F_2.  ``lower`` evaluates F_{2n-2} on point
    arrays (P, 2n-2, d); it defaults to the exact F_2 when 2n = 4.
    ``cfg.params`` supplies d and xi; n is taken from the point count.
    """
    y = np.asarray(y, dtype=float)
    npts = y.shape[0]
    if npts % 2:
        raise ValueError("odd correlators vanish; need an even number of points")
    if npts > max_points:
        raise DepthError(f"{npts} points exceeds the depth guard ({max_points})")
    if npts > MAX_POINTS:
        raise DepthError(f"at most {MAX_POINTS} points are supported")
    params = SymbolParams(npts, cfg.params.d, cfg.params.xi)
    if npts == 2:
        return f2_at(y[0], y[1], forcing, params)
    if lower is None:
        if npts != 4:
            raise ValueError("a lower-level evaluator is required beyond four points")
        lower = OracleF2(forcing, params)
    if lower.points != npts - 2:
        raise ValueError(f"lower evaluator handles {lower.points} points, need {npts - 2}")
    x0 = translation_reduce(y)
    if degeneration_distance(x0) == 0:
        raise SymbolError("start configuration lies on the degeneration set")
    pairs = list(combinations(range(npts), 2))
    obs = [_pair_observable(i, j, npts, forcing, lower) for i, j in pairs]
    run = cfg.replace(params=params)
    ens = simulate_ensemble(x0, run, obs, checkpoints=green_checkpoints(run.t_max),
                            workers=workers, cache=cache)
    terms = {}
    value = tail = 0.0
    for k, pr in enumerate(pairs):
        gs = green_from_ensemble(ens, k, run, label=f"pair{pr}")
        terms[pr] = gs
        value += gs.value
        tail += gs.tail_bound
    per_path = ens.occupation_history[-1][ens.good].sum(axis=1)
    stderr = float(bootstrap_stderr(per_path, _resample_seed(run, "hopf", npts)))
    return HopfResult(float(value), stderr, float(tail), terms)


def f4_at(y, forcing, cfg, workers=1, cache=None):
    """Four-point function at points y (4, d), F_2 inside from the oracle."""
    y = np.asarray(y, dtype=float)
    if y.shape[0] != 4:
        raise ValueError("f4_at needs exactly four points")
    return f2n_recursive(y, forcing, cfg, workers=workers, cache=cache)
