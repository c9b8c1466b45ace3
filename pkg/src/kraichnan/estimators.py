"""Heat-kernel, semigroup and Green's-function estimators on path ensembles.

Also hosts the exact radial oracle for the two-point function and the
comparison envelopes E_C used by the decay checks.
"""
from dataclasses import dataclass, field
import math
import warnings

import numpy as np
from scipy import integrate, interpolate

from . import rng
from .diffusion import (Observable, BinnedObservable, simulate_ensemble, EngineError)
from .forcing import ForcingSpec
from .symbol import SymbolError, _blocks

BOOTSTRAP_REPS = 200
BATCHES = 100
MIN_PATHS = 100


class InsufficientDataError(RuntimeError):
    pass


class DivergenceWarning(RuntimeWarning):
    pass


@dataclass(frozen=True)
class MCValue:
    value: float
    stderr: float


@dataclass(frozen=True)
class GridSpec:
    """Evaluation points (G, D) in flattened reduced coordinates."""

    centers: np.ndarray
    cell_volume: float = None

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        object.__setattr__(self, "centers", c)


def box_grid(center, half_width, points):
    """Regular grid of ``points`` per axis on the cube center +- half_width."""
    center = np.asarray(center, dtype=float).reshape(-1)
    axes = [np.linspace(c - half_width, c + half_width, points) for c in center]
    mesh = np.meshgrid(*axes, indexing="ij")
    step = 2.0 * half_width / (points - 1)
    return GridSpec(np.stack([g.reshape(-1) for g in mesh], axis=1), step ** center.size)


@dataclass
class DensityGrid:
    centers: np.ndarray
    bandwidth: np.ndarray
    values: np.ndarray
    stderr: np.ndarray
    extra: dict = field(default_factory=dict)


@dataclass(frozen=True)
class GreenSample:
    value: float
    stderr: float
    t_truncation: float
    tail_bound: float
    tail_exponent: float = float("nan")

    @property
    def total(self):
        return self.value + self.tail_bound


# resampling -----------------------------------------------------------------

def bootstrap_stderr(values, seed, reps=BOOTSTRAP_REPS):
    """Path-resampling standard error of the mean of ``values`` (N,) or (N, K)."""
    values = np.asarray(values, dtype=float)
    N = values.shape[0]
    if N < 2:
        return np.full(values.shape[1:], np.nan) if values.ndim > 1 else float("nan")
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    means = np.empty((reps,) + values.shape[1:])
    for r in range(reps):
        means[r] = values[gen.integers(0, N, N)].mean(axis=0)
    return means.std(axis=0, ddof=1)


def batch_sums(values, nb=BATCHES):
    """Sums of (N, ...) values over nb contiguous path batches, plus batch sizes."""
    N = values.shape[0]
    nb = max(1, min(nb, N))
    edges = np.linspace(0, N, nb + 1).astype(int)
    sums = np.add.reduceat(values, edges[:-1], axis=0)
    return sums, np.diff(edges)


def batch_bootstrap(sums, sizes, seed, reps=BOOTSTRAP_REPS):
    """Standard error of sum/size under resampling of whole batches."""
    nb = sums.shape[0]
    gen = np.random.Generator(np.random.Philox(key=int(seed)))
    est = np.empty((reps,) + sums.shape[1:])
    for r in range(reps):
        idx = gen.integers(0, nb, nb)
        est[r] = sums[idx].sum(axis=0) / sizes[idx].sum()
    return est.std(axis=0, ddof=1)


def _resample_seed(cfg, *labels):
    return rng.derive_seed(cfg.seed, "resample", *labels)


# heat kernel and semigroup ---------------------------------------------------

def scott_bandwidth(samples):
    samples = np.asarray(samples, dtype=float)
    N, D = samples.shape
    return samples.std(axis=0, ddof=1) * N ** (-1.0 / (D + 4))


def _ensemble_at(x0, t, cfg, ensemble, workers, cache, observables=(), checkpoints=None):
    if ensemble is None:
        ensemble = simulate_ensemble(x0, cfg.replace(t_max=t), observables,
                                     checkpoints=checkpoints, workers=workers, cache=cache)
    return ensemble


def heat_kernel_density(x0, t, cfg, grid, ensemble=None, workers=1, cache=None,
                        bandwidth=None):
    """Gaussian-product KDE of the law of X_t started at x0, evaluated on ``grid``.

    ``t`` must be t_max or a recorded checkpoint of ``ensemble`` when one is
    supplied.  Standard errors resample contiguous batches of paths.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    ens = _ensemble_at(x0, t, cfg, ensemble, workers, cache)
    X = ens.snapshot(t)[ens.good].reshape(int(ens.good.sum()), -1)
    if not isinstance(grid, GridSpec):
        grid = GridSpec(grid)
    C = grid.centers
    if C.shape[1] != X.shape[1]:
        raise SymbolError("grid dimension does not match the configuration space")
    h = scott_bandwidth(X) if bandwidth is None else np.broadcast_to(
        np.asarray(bandwidth, dtype=float), (X.shape[1],)).copy()
    lo, hi = C.min(axis=0) - 2 * h, C.max(axis=0) + 2 * h
    inside = np.all((X >= lo) & (X <= hi), axis=1)
    n_eff = int(inside.sum())
    if n_eff < MIN_PATHS:
        raise InsufficientDataError(f"only {n_eff} paths near the grid (need {MIN_PATHS})")
    N = X.shape[0]
    norm = 1.0 / (np.prod(h) * (2 * math.pi) ** (X.shape[1] / 2))
    sums = np.zeros((min(BATCHES, N), C.shape[0]))
    sizes = None
    for g0 in range(0, C.shape[0], 256):
        cg = C[g0:g0 + 256]
        q = np.zeros((N, cg.shape[0]))
        for k in range(X.shape[1]):
            q += ((X[:, k, None] - cg[None, :, k]) / h[k]) ** 2
        contrib = norm * np.exp(-0.5 * q)
        s, sizes = batch_sums(contrib)
        sums[:, g0:g0 + 256] = s
    values = sums.sum(axis=0) / N
    seed = _resample_seed(cfg, "kde", t)
    stderr = batch_bootstrap(sums, sizes, seed)
    extra = {"t": t, "n_effective": n_eff, "paths": N}
    if grid.cell_volume is not None:
        extra["mass"] = float(values.sum() * grid.cell_volume)
        extra["mass_stderr"] = float(batch_bootstrap(sums.sum(axis=1, keepdims=True), sizes, seed)[0]
                                     * grid.cell_volume)
    return DensityGrid(C, h, values, stderr, extra)


def semigroup_apply(f, x0, t, cfg, ensemble=None, workers=1, cache=None):
    """Monte Carlo value of (e^{tL} f)(x0) = E f(X_t) with a resampling stderr."""
    ens = _ensemble_at(x0, t, cfg, ensemble, workers, cache)
    X = ens.snapshot(t)[ens.good]
    vals = np.asarray(f(X), dtype=float)
    vals = np.broadcast_to(vals, (X.shape[0],))
    return MCValue(float(vals.mean()), float(bootstrap_stderr(vals, _resample_seed(cfg, "semigroup", t))))


# Green's functions --------------------------------------------------------------

def green_checkpoints(T, count=9):
    """Geometric checkpoints over the last decade of [0, T] used for tail fits."""
    return np.geomspace(T / 10.0, T, count)


def green_from_ensemble(ens, column, cfg, label="green"):
    """GreenSample from the occupation history of scalar observable ``column``."""
    good = ens.good
    L = ens.occupation_history[:, good, column]
    T = float(ens.checkpoints[-1])
    final = L[-1]
    value = float(final.mean())
    stderr = float(bootstrap_stderr(final, _resample_seed(cfg, label, column)))
    ck = ens.checkpoints
    sel = ck >= T / 10.0 * (1 - 1e-12)
    tk, Lk = ck[sel], L[sel].mean(axis=1)
    if tk.size < 3:
        raise EngineError("need at least three checkpoints over the last decade for the tail fit")
    rates = np.diff(Lk) / np.diff(tk)
    mids = np.sqrt(tk[1:] * tk[:-1])
    pos = rates > 0
    if not np.any(pos):
        return GreenSample(value, stderr, T, 0.0, float("nan"))
    if pos.sum() < 3:
        # too few informative increments; bound crudely by the last rate and t^-2
        r_last = rates[pos][-1]
        return GreenSample(value, stderr, T, float(r_last * mids[pos][-1] ** 2 / T), -2.0)
    p, logc = np.polyfit(np.log(mids[pos]), np.log(rates[pos]), 1)
    if p >= -1:
        warnings.warn(f"fitted tail exponent {p:.3f} >= -1: occupation integral does not converge",
                      DivergenceWarning, stacklevel=2)
        return GreenSample(float("nan"), stderr, T, float("inf"), float(p))
    tail = math.exp(logc) * T ** (p + 1) / (-(p + 1))
    return GreenSample(value, stderr, T, float(tail), float(p))


def _as_observable(g, key=None):
    if isinstance(g, Observable):
        return g
    return Observable(g, key if key is not None else getattr(g, "key", None))


def green_apply(g, x0, cfg, workers=1, cache=None, key=None):
    """Occupation-time estimate of (M^{-1} g)(x0) truncated at T = cfg.t_max.

    ``g`` maps a batch (P, n-1, d) to (P,) values and should be nonnegative,
    bounded and compactly supported.  The truncation remainder is estimated
    by a power-law fit of E g(X_t) over the last decade and reported as
    ``tail_bound`` (not included in ``value``).
    """
    p = cfg.params
    if p.dim < 2:
        raise SymbolError("Green's function requires (n-1)d >= 2")
    obs = _as_observable(g, key)
    ens = simulate_ensemble(x0, cfg, [obs], checkpoints=green_checkpoints(cfg.t_max),
                            workers=workers, cache=cache)
    return green_from_ensemble(ens, 0, cfg)


@dataclass(frozen=True)
class RadialRegion:
    """Bins in |y - x0| (edges) times angle about the x0 direction (2D only).

    Points with |y - x0| < rho |x0| are always excluded.
    """

    edges: tuple
    nangle: int = 1
    rho: float = 0.25

    def __post_init__(self):
        e = tuple(float(v) for v in self.edges)
        if len(e) < 2 or any(b <= a for a, b in zip(e, e[1:])) or e[0] < 0:
            raise ValueError("edges must be increasing and nonnegative")
        object.__setattr__(self, "edges", e)

    @property
    def nbins(self):
        return (len(self.edges) - 1) * self.nangle

    def binner(self, x0):
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        edges = np.asarray(self.edges)
        r0 = float(np.linalg.norm(x0))
        excl = self.rho * r0
        na = self.nangle
        if na > 1 and x0.size != 2:
            raise ValueError("angular bins need a two-dimensional configuration space")
        base = math.atan2(x0[1], x0[0]) if na > 1 else 0.0

        def fn(b):
            y = b.reshape(b.shape[0], -1) - x0
            r = np.sqrt(np.sum(y * y, axis=1))
            ri = np.searchsorted(edges, r, side="right") - 1
            ok = (ri >= 0) & (ri < edges.size - 1) & (r >= excl)
            if na > 1:
                th = np.mod(np.arctan2(y[:, 1], y[:, 0]) - base + math.pi, 2 * math.pi) - math.pi
                ai = np.minimum(((th + math.pi) / (2 * math.pi) * na).astype(int), na - 1)
                idx = ri * na + ai
            else:
                idx = ri
            return np.where(ok, idx, -1)

        return fn

    def volumes(self, D):
        e = np.asarray(self.edges)
        if self.nangle > 1:
            area = 0.5 * (e[1:] ** 2 - e[:-1] ** 2) * (2 * math.pi / self.nangle)
            return np.repeat(area, self.nangle)
        s = 2 * math.pi ** (D / 2) / math.gamma(D / 2)
        return s * (e[1:] ** D - e[:-1] ** D) / D

    def centers(self, x0):
        x0 = np.asarray(x0, dtype=float).reshape(-1)
        e = np.asarray(self.edges)
        rm = 0.5 * (e[1:] + e[:-1])
        if self.nangle == 1:
            u = x0 / np.linalg.norm(x0)
            return np.repeat(rm, 1), np.zeros(rm.size), x0 + rm[:, None] * u
        width = 2 * math.pi / self.nangle
        th = -math.pi + width * (np.arange(self.nangle) + 0.5)
        base = math.atan2(x0[1], x0[0])
        R, TH = np.meshgrid(rm, th, indexing="ij")
        pts = x0 + np.stack([R * np.cos(TH + base), R * np.sin(TH + base)], axis=-1)
        return R.reshape(-1), TH.reshape(-1), pts.reshape(-1, 2)


def green_density(x0, region, cfg, workers=1, cache=None, min_paths=MIN_PATHS):
    """Time-integrated occupation density on the bins of ``region``."""
    b0 = _blocks(x0)
    fn = region.binner(b0)
    key = f"radial:{region.edges}:{region.nangle}:{region.rho}"
    obs = BinnedObservable(fn, region.nbins, key=key)
    ens = simulate_ensemble(b0, cfg, [obs], workers=workers, cache=cache)
    occ = ens.binned[0][ens.good]
    visited = int(np.sum(occ.sum(axis=1) > 0))
    if visited < min_paths:
        raise InsufficientDataError(f"only {visited} paths reached the region (need {min_paths})")
    vol = region.volumes(b0.size)
    sums, sizes = batch_sums(occ)
    values = sums.sum(axis=0) / occ.shape[0] / vol
    stderr = batch_bootstrap(sums, sizes, _resample_seed(cfg, "green_density")) / vol
    radius, angle, pts = region.centers(b0)
    # radial profile: all angles pooled
    na = region.nangle
    rs = sums.reshape(sums.shape[0], -1, na).sum(axis=2)
    rvol = vol.reshape(-1, na).sum(axis=1)
    prof = rs.sum(axis=0) / occ.shape[0] / rvol
    prof_se = batch_bootstrap(rs, sizes, _resample_seed(cfg, "green_profile")) / rvol
    e = np.asarray(region.edges)
    extra = {"radius": radius, "angle": angle, "t_truncation": cfg.t_max,
             "visited": visited, "profile_radius": 0.5 * (e[1:] + e[:-1]),
             "profile": prof, "profile_stderr": prof_se}
    widths = np.diff(e)
    return DensityGrid(pts, np.repeat(widths, na), values, stderr, extra)


# radial oracle ----------------------------------------------------------------

def _forcing_profile(chi):
    if isinstance(chi, ForcingSpec):
        return chi.profile, chi.support
    fn, support = chi
    return fn, float(support)


def radial_f2_oracle(r, chi, params, epsrel=1e-10):
    """F(r) = int_r^inf rho^{1-d-xi} int_0^rho s^{d-1} chi(s) ds drho by quadrature.

    ``chi`` is a ForcingSpec or a pair (profile function, support radius).
    """
    if params.n != 2:
        raise SymbolError("the radial oracle is for n = 2")
    d, xi = params.d, params.xi
    if d + xi <= 2:
        raise SymbolError("d + xi <= 2: the oracle integral diverges")
    r = float(r)
    if r < 0:
        raise ValueError("r must be nonnegative")
    prof, R = _forcing_profile(chi)
    kw = dict(epsabs=0.0, epsrel=epsrel, limit=200)

    def inner(rho):
        top = min(rho, R)
        if top <= 0:
            return 0.0
        return integrate.quad(lambda s: s ** (d - 1) * float(prof(s)), 0.0, top, **kw)[0]

    total = inner(R)
    a = max(r, R)
    tail = total * a ** (2 - d - xi) / (d + xi - 2)
    if r >= R:
        return float(tail)
    body = integrate.quad(lambda rho: rho ** (1 - d - xi) * inner(rho), r, R, **kw)[0]
    return float(body + tail)


class F2Evaluator:
    """Vectorized F_2(r) for a forcing: closed form for the ball, spline table otherwise."""

    def __init__(self, forcing, params, table_points=160):
        self.forcing = forcing
        self.params = params.with_n(2)
        d, xi = self.params.d, self.params.xi
        if d + xi <= 2:
            raise SymbolError("d + xi <= 2: F_2 diverges")
        R = forcing.support
        self._R = R
        if forcing.kind == "ball":
            self._spline = None
        else:
            s = np.linspace(0.0, 1.0, table_points) ** 2 * R
            vals = np.array([radial_f2_oracle(v, forcing, self.params) for v in s])
            self._spline = interpolate.CubicSpline(s, vals)
            self._tail_coef = vals[-1] * R ** (d + xi - 2)

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        d, xi, R = self.params.d, self.params.xi, self._R
        k = d + xi - 2
        if self._spline is None:
            safe = np.maximum(r, 1e-300)
            near = (1 - (np.minimum(r, R) / R) ** (2 - xi)) * R ** (2 - xi) / (d * (2 - xi))
            near = near + R ** (2 - xi) / (d * k)
            far = R ** d * safe ** (-k) / (d * k)
            return np.where(r < R, near, far)
        out = np.empty(r.shape)
        inside = r < R
        out[inside] = self._spline(r[inside])
        out[~inside] = self._tail_coef * r[~inside] ** (-k)
        return out


# comparison envelopes ---------------------------------------------------------

def log_envelope_E(t, x, y, C, d, xi):
    """log E_C(t, x, y); safe where E_C itself underflows."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    t = np.asarray(t, dtype=float)
    nx = np.sqrt(np.sum(x * x, axis=-1))
    ny = np.sqrt(np.sum(y * y, axis=-1))
    dxy = np.sqrt(np.sum((x - y) ** 2, axis=-1))
    local = ny < nx / 2
    safe = np.where(local, nx, 1.0)
    lc = np.log(C)
    g = lc - (xi * d / 2) * np.log(safe) - (d / 2) * np.log(t) - safe ** (-xi) * dxy ** 2 / (C * t)
    far = lc - (d / (2 - xi)) * np.log(t) - dxy ** (2 - xi) / (C * t)
    return np.where(local, g, far)


def envelope_E(t, x, y, C, d, xi):
    """Two-branch envelope E_C(t, x, y) for vectors x, y in R^d (broadcasts)."""
    return np.exp(log_envelope_E(t, x, y, C, d, xi))


def estimate_E(t, x, y, C, params, split=None):
    """Blockwise product of E_C, or the split envelope when ``split`` = l is given.

    With a split the first l blocks carry the degenerate scaling:
    C t^{-ld/(2-xi) - (m-l)d/2} exp(-(|dx_1|^{2-xi} + |dx_2|^2) / (C t)).
    """
    if not t > 0 or not C > 0:
        raise ValueError("need t > 0 and C > 0")
    bx, by = _blocks(x), _blocks(y)
    d, xi = params.d, params.xi
    if split is None:
        out = 1.0
        for i in range(bx.shape[0]):
            out = out * envelope_E(t, bx[i], by[i], C, d, xi)
        return float(out)
    m = bx.shape[0]
    l = int(split)
    if not 0 <= l <= m:
        raise ValueError(f"split must lie in [0, {m}]")
    a = float(np.sqrt(np.sum((bx[:l] - by[:l]) ** 2)))
    b = float(np.sum((bx[l:] - by[l:]) ** 2))
    expo = -l * d / (2 - xi) - (m - l) * d / 2
    return float(C * t ** expo * math.exp(-(a ** (2 - xi) + b) / (C * t)))


def estimate_En(x, y, C, params):
    """E^n_C(x, y) = int_0^inf prod_i E_C(t, x_i, y_i) dt, by quadrature in log t."""
    f = lambda u: math.exp(u) * estimate_E(math.exp(u), x, y, C, params)
    val, _ = integrate.quad(f, -60.0, 60.0, limit=400, epsrel=1e-8)
    return float(val)
