"""Sampled checks of the symbol inequalities.

Every check returns a CheckReport whose ``max_ratio`` is compared with a
constant frozen by the calibration run (see ``calibration``).  Samples come
from numpy generators seeded by the report seed, so reports are reproducible.
"""
from itertools import combinations
import math

import numpy as np
from scipy.stats import qmc

from ..symbol import (SymbolParams, SymbolError, symbol_batch, symmetries, window_sums,
                      degeneration_distance_batch, d_batch, rank_at, lift, permutation_map,
                      _blocks)
from .report import CheckReport
from . import calibration

DEFAULT_SEED = 20261014
LOG_LO, LOG_HI = 1e-3, 1.0
LEMMAS = ("cro1", "cro2", "cro3", "cro4", "cro5", "don")
# smallest n for which each lemma's index pattern exists (i = 1, j = n - 1)
LEMMA_MIN_N = {"cro1": 3, "cro2": 4, "cro3": 4, "cro4": 4, "cro5": 4, "don": 2}
LEMMA_DEFAULT_N = {"cro1": 3, "cro2": 4, "cro3": 4, "cro4": 4, "cro5": 5, "don": 4}
MAX_DRAWS = 400


class SamplerError(RuntimeError):
    """The sampler could not produce configurations satisfying a hypothesis."""


def _gen(seed):
    return np.random.Generator(np.random.Philox(key=int(seed)))


def _unit(g, shape):
    u = g.standard_normal(shape)
    return u / np.linalg.norm(u, axis=-1, keepdims=True)


def _loguniform(g, shape, lo=LOG_LO, hi=LOG_HI):
    return np.exp(g.uniform(math.log(lo), math.log(hi), shape))


def random_blocks(g, count, m, d, lo=LOG_LO, hi=LOG_HI):
    """Blocks with independent uniform directions and log-uniform magnitudes."""
    return _unit(g, (count, m, d)) * _loguniform(g, (count, m, 1), lo, hi)


def _norm(a):
    return np.sqrt(np.sum(a * a, axis=-1))


def _resolve(name, value, seed):
    if value is not None:
        return float(value)
    if int(seed) == calibration.CALIBRATION_SEED:
        raise calibration.CalibrationError(
            f"seed {seed} is the calibration seed; validate {name!r} on a different seed")
    return calibration.constant(name)


# degeneration -----------------------------------------------------------------

def check_degeneration(params, samples=1000, tol=1e-10, seed=DEFAULT_SEED, c=None):
    """Symbol singular on every window subspace, lambda_min >= c dist^xi off it.

    On-set points are drawn on a dyadic lattice so that the vanishing window
    sum is exactly zero in floating point.
    """
    if samples < 1000:
        raise ValueError("check_degeneration needs at least 1000 samples")
    g = _gen(seed)
    m, d, xi = params.m, params.d, params.xi
    windows = [(i, j) for i in range(m) for j in range(i, m)]
    # on the set
    ints = g.integers(-1024, 1025, size=(samples, m, d))
    b = ints / 1024.0
    which = g.integers(0, len(windows), samples)
    for k, (i, j) in enumerate(windows):
        sel = which == k
        rest = b[sel, i:j].sum(axis=1) if j > i else 0.0
        b[sel, j] = -rest
    S = symbol_batch(b, params)
    lam = np.linalg.eigvalsh(S)[:, 0]
    nrm = np.max(np.abs(S), axis=(-1, -2))
    on_ratio = np.where(nrm > 0, np.abs(lam) / np.where(nrm > 0, nrm, 1.0), 0.0)
    on = CheckReport("degeneration/on-set", samples, float(on_ratio.max()), tol, seed,
                     details={"windows": len(windows)})
    # off the set, scaled to distance delta in [0.1, 1]
    u = g.standard_normal((samples, m, d))
    dist = degeneration_distance_batch(u)
    delta = _loguniform(g, samples, 0.1, 1.0)
    x = u * (delta / dist)[:, None, None]
    lam_off = np.linalg.eigvalsh(symbol_batch(x, params))[:, 0]
    off_ratio = delta ** xi / lam_off
    name = calibration.key("degeneration", params)
    inv_c = _resolve(name, None if c is None else 1.0 / c, seed)
    return CheckReport(name, samples, float(off_ratio.max()), inv_c, seed, subchecks=[on],
                       details={"c": 1.0 / inv_c})


# symmetry -----------------------------------------------------------------------

def check_symmetry(params, samples=1000, seed=DEFAULT_SEED, tol=1e-12):
    """Quadratic-form invariance under all permutation-induced maps."""
    if params.n > 5:
        raise SymbolError("check_symmetry enumerates n! maps; n <= 5 supported")
    g = _gen(seed)
    m, d = params.m, params.d
    x = g.standard_normal((samples, m, d))
    v = g.standard_normal((samples, m, d))
    S = symbol_batch(x, params)
    base = np.einsum("pi,pij,pj->p", v.reshape(samples, -1), S, v.reshape(samples, -1))
    scale = np.linalg.norm(S, ord=2, axis=(-1, -2)) * np.sum(v.reshape(samples, -1) ** 2, axis=1)
    worst = 0.0
    maps = symmetries(params.n, d)
    for L in maps:
        Lx = np.einsum("ij,pjd->pid", L.coeffs, x)
        Lv = np.linalg.solve(L.coeffs.T, v.reshape(samples, m, d).transpose(1, 0, 2).reshape(m, -1))
        Lv = Lv.reshape(m, samples, d).transpose(1, 0, 2).reshape(samples, -1)
        val = np.einsum("pi,pij,pj->p", Lv, symbol_batch(Lx, params), Lv)
        worst = max(worst, float(np.max(np.abs(val - base) / scale)))
    return CheckReport(f"symmetry:n={params.n}:d={d}:xi={params.xi:g}", samples * len(maps),
                       worst, tol, seed, details={"maps": len(maps)})


# cross-term lemmas -----------------------------------------------------------------

def _draw(g, count, m, d, accept):
    got, total = [], 0
    for _ in range(MAX_DRAWS):
        b = random_blocks(g, 4 * count, m, d)
        ok = accept(b)
        got.append(b[ok])
        total += int(ok.sum())
        if total >= count:
            break
    if total < count:
        raise SamplerError(f"hypothesis accepted only {total} of the {count} requested samples")
    return np.concatenate(got)[:count]


def _W(b, i, j):
    """|x_{i,j}| for 1-based inclusive windows of a batch."""
    return _norm(b[:, i - 1:j].sum(axis=1))


def _sup_bilinear(B, a, c):
    """sup over v_i, v_j of |<v_i, B v_j>| / (a|v_i|^2 + c|v_j|^2) = |B|_2 / (2 sqrt(ac))."""
    return np.linalg.norm(B, ord=2, axis=(-1, -2)) / (2.0 * np.sqrt(a * c))


def _mixed(b, i, j, d, xi):
    """d(x_{i,j}) - d(x_{i+1,j}) - d(x_{i,j-1}) + d(x_{i+1,j-1}), 1-based."""
    def dd(lo, hi):
        if hi < lo:
            return np.zeros((b.shape[0], d, d))
        return d_batch(b[:, lo - 1:hi].sum(axis=1), d, xi)
    return dd(i, j) - dd(i + 1, j) - dd(i, j - 1) + dd(i + 1, j - 1)


def _subset_mixed(b, A, d, xi):
    A = sorted(A)
    def dd(S):
        if not S:
            return np.zeros((b.shape[0], d, d))
        return d_batch(b[:, [k - 1 for k in S]].sum(axis=1), d, xi)
    return dd(A) - dd(A[1:]) - dd(A[:-1]) + dd(A[1:-1])


def lemma_samples(lemma, params, samples, g):
    """Configurations satisfying the lemma's hypotheses plus the LHS/RHS ratios."""
    m, d, xi = params.m, params.d, params.xi
    if params.n < LEMMA_MIN_N[lemma]:
        raise SamplerError(f"{lemma} needs n >= {LEMMA_MIN_N[lemma]}")
    i, j = 1, m
    h = 1.0 - xi / 2
    q = xi / 2
    if lemma == "cro1":
        j = i + 1
        b = _draw(g, samples, m, d, lambda b: _W(b, i, i) < 0.5 * _W(b, j, j))
        B = _mixed(b, i, j, d, xi)
        rho = _W(b, i, i) / _W(b, j, j)
        bracket = rho ** h + rho ** q
    elif lemma == "cro2":
        acc = lambda b: (_W(b, i, i) < 0.5 * np.minimum(_W(b, i + 1, j), _W(b, i + 1, j - 1)))
        b = _draw(g, samples, m, d, acc)
        xi_, a1, a2, xj = _W(b, i, i), _W(b, i + 1, j), _W(b, i + 1, j - 1), _W(b, j, j)
        B = _mixed(b, i, j, d, xi)
        bracket = (xi_ / a1) ** h * (a1 / xj) ** q + (xi_ / a2) ** h * (a2 / xj) ** q
    elif lemma == "cro3":
        acc = lambda b: ((0.5 * _W(b, i + 1, j - 1) <= _W(b, i, i))
                         & (_W(b, i, i) < 0.5 * _W(b, i + 1, j)))
        b = _draw(g, samples, m, d, acc)
        xi_, a1, xj = _W(b, i, i), _W(b, i + 1, j), _W(b, j, j)
        B = _mixed(b, i, j, d, xi)
        bracket = (xi_ / a1) ** h * (a1 / xj) ** q + (xi_ / xj) ** q
    elif lemma == "cro4":
        acc = lambda b: np.maximum(_W(b, i, i), _W(b, j, j)) < _W(b, i + 1, j - 1) / 3.0
        b = _draw(g, samples, m, d, acc)
        mm = _W(b, i + 1, j - 1)
        B = _mixed(b, i, j, d, xi)
        bracket = (_W(b, i, i) / mm) ** h * (_W(b, j, j) / mm) ** h
    elif lemma == "cro5":
        inner = list(range(i + 1, j))
        subsets = [tuple([i] + list(s) + [j]) for r in range(len(inner) + 1)
                   for s in combinations(inner, r)]
        pick = g.integers(0, len(subsets), samples)
        parts, ratios = [], []
        for k, A in enumerate(subsets):
            cnt = int(np.sum(pick == k))
            if cnt == 0:
                continue
            out = [kk for kk in range(i, j + 1) if kk not in A]

            def stats(b, A=A, out=out):
                s = sum((_W(b, kk, kk) for kk in out), np.zeros(b.shape[0]))
                mins = np.min(np.stack([_W(b, k1, k2) for k1 in A for k2 in A if k1 <= k2]), axis=0)
                return s, mins

            b = _draw(g, cnt, m, d, lambda b: (lambda s, mn: s <= 0.5 * mn)(*stats(b)))
            s, mn = stats(b)
            sA = sum((_W(b, kk, kk) for kk in A), np.zeros(b.shape[0]))
            B = _mixed(b, i, j, d, xi) - _subset_mixed(b, A, d, xi)
            bracket = (s / mn) ** h * (sA / _W(b, j, j)) ** q + (s / mn) ** q
            lhs = _sup_bilinear(B, _W(b, i, i) ** xi, _W(b, j, j) ** xi)
            with np.errstate(invalid="ignore", divide="ignore"):
                r = np.where(lhs == 0, 0.0, lhs / bracket)
            parts.append(b)
            ratios.append(r)
        return np.concatenate(parts), np.concatenate(ratios)
    elif lemma == "don":
        eps = 0.5

        def acc(b):
            sums = np.stack([_norm(s) for s in window_sums(b).values()])
            return eps * sums.max(axis=0) <= sums.min(axis=0)

        b = _draw(g, samples, m, d, acc)
        return b, _comparability(symbol_batch(b, params), _diag_model(b, xi))
    else:
        raise ValueError(f"unknown lemma {lemma!r}; expected one of {LEMMAS}")
    lhs = _sup_bilinear(B, _W(b, i, i) ** xi, _W(b, j, j) ** xi)
    return b, lhs / bracket


def _diag_model(b, xi):
    w = _norm(b) ** xi
    P, m, d = b.shape
    return np.repeat(w, d, axis=1)


def _comparability(S, model):
    """max(lambda_max, 1/lambda_min) of S relative to a model matrix (or diagonal)."""
    if model.ndim == 2:
        wi = 1.0 / np.sqrt(model)
        Wm = S * wi[:, :, None] * wi[:, None, :]
    else:
        lam, V = np.linalg.eigh(model)
        root = V * (1.0 / np.sqrt(lam))[:, None, :]
        Wh = np.einsum("pik,pjk->pij", root, V)
        Wm = np.einsum("pij,pjk,pkl->pil", Wh, S, Wh)
    ev = np.linalg.eigvalsh(0.5 * (Wm + np.swapaxes(Wm, -1, -2)))
    return np.maximum(ev[:, -1], 1.0 / ev[:, 0])


def check_cross_lemma(lemma, params=None, samples=10000, E=None, seed=DEFAULT_SEED):
    """Max over hypothesis-satisfying samples of LHS / (bracket x weights).

    The LHS is maximized over the direction vectors exactly (operator norm),
    which is the strongest form of the ``for every v`` statement.
    """
    if lemma not in LEMMAS:
        raise ValueError(f"unknown lemma {lemma!r}; expected one of {LEMMAS}")
    if params is None:
        params = SymbolParams(LEMMA_DEFAULT_N[lemma], 2, 1.0)
    g = _gen(seed)
    _, ratios = lemma_samples(lemma, params, samples, g)
    name = calibration.key(lemma, params)
    const = _resolve(name, E, seed)
    return CheckReport(name, samples, float(np.max(ratios)), const, seed,
                       details={"median_ratio": float(np.median(ratios))})


# structure comparability ---------------------------------------------------------

def reorganize(x, params):
    """Symmetry map making coinciding points consecutive, and the mapped point."""
    y = lift(x)
    n = y.shape[0]
    order, seen = [], [False] * n
    for a in range(n):
        if seen[a]:
            continue
        for b in range(a, n):
            if not seen[b] and np.array_equal(y[a], y[b]):
                order.append(b)
                seen[b] = True
    L = permutation_map(tuple(order), params.d)
    return L, L.apply(x).blocks


def _runs(A):
    runs, cur = [], []
    for k in sorted(A):
        if cur and k == cur[-1] + 1:
            cur.append(k)
        else:
            if cur:
                runs.append(cur)
            cur = [k]
    if cur:
        runs.append(cur)
    return runs


def structure_model(yb, A, params):
    """Block model: sigma(M_{len+1}) on each run of A, identity elsewhere (batch)."""
    P, m, d = yb.shape
    M = np.zeros((P, m * d, m * d))
    runs = _runs(A)
    for run in runs:
        sub = SymbolParams(len(run) + 1, d, params.xi)
        lo, hi = run[0] * d, (run[-1] + 1) * d
        M[:, lo:hi, lo:hi] = symbol_batch(yb[:, run[0]:run[-1] + 1], sub)
    for k in range(m):
        if k not in A:
            M[:, k * d:(k + 1) * d, k * d:(k + 1) * d] = np.eye(d)
    return M


def check_structure(x, params, eps=0.1, samples=2000, lam=None, seed=DEFAULT_SEED, name=None):
    """Comparability of the symbol with its block model near a degeneration point."""
    xb = _blocks(x)
    if rank_at(xb, params) < 1:
        raise SymbolError("x is not a degeneration point")
    L, xr = reorganize(xb, params)
    A = [k for k in range(params.m) if not np.any(xr[k])]
    for (i0, j0), s in window_sums(xr).items():
        if not set(range(i0, j0 + 1)) <= set(A) and not np.any(s):
            raise SymbolError("reorganization left a vanishing window outside A")
    g = _gen(seed)
    P, m, d = samples, params.m, params.d
    y = np.empty((P, m, d))
    offset = np.empty((P, m))
    for k in range(m):
        if k in A:
            rad = _loguniform(g, P, 1e-4 * eps, eps)
            y[:, k] = _unit(g, (P, d)) * rad[:, None]
        else:
            rad = eps * g.uniform(0, 1, P) ** (1.0 / d)
            y[:, k] = xr[k] + _unit(g, (P, d)) * rad[:, None]
        offset[:, k] = rad
    ratios = _comparability(symbol_batch(y, params), structure_model(y, A, params))
    if name is None:
        name = calibration.key("structure", params, point=_point_label(xb), eps=eps)
    const = _resolve(name, lam, seed)
    half = np.all(offset <= eps / 2, axis=1)
    details = {"A": [k + 1 for k in A], "permutation": list(L.provenance), "eps": eps,
               "ratio_half_neighbourhood": float(ratios[half].max()) if half.any() else None}
    return CheckReport(name, samples, float(ratios.max()), const, seed, details=details)


def _point_label(xb):
    return "(" + ",".join("0" if not np.any(r) else "*" for r in xb) + ")"


# weights --------------------------------------------------------------------------

def subspace_union(constraints):
    """Orthonormal row bases Q_k for subspaces {x : K_k x = 0}."""
    out = []
    for K in constraints:
        K = np.atleast_2d(np.asarray(K, dtype=float))
        q, _ = np.linalg.qr(K.T)
        out.append(q)
    return out


def distance_to_union(x, bases):
    """Euclidean distance from rows of x to the union of subspaces."""
    x = np.asarray(x, dtype=float)
    best = None
    for q in bases:
        dist = np.sqrt(np.sum((x @ q) ** 2, axis=-1))
        best = dist if best is None else np.minimum(best, dist)
    return best


def degeneration_constraints(params):
    """Constraint matrices of the window subspaces {x_{i,j} = 0}."""
    m, d = params.m, params.d
    out = []
    for i in range(m):
        for j in range(i, m):
            row = np.zeros((1, m))
            row[0, i:j + 1] = 1.0
            out.append(np.kron(row, np.eye(d)))
    return out


def ball_points(N, count, seed):
    """Scrambled Sobol points mapped to the unit ball of R^N."""
    from scipy.special import ndtri
    sob = qmc.Sobol(d=N + 1, scramble=True, seed=np.random.default_rng(seed))
    u = sob.random(count)
    u = np.clip(u, 1e-12, 1 - 1e-12)
    z = ndtri(u[:, :N])
    z /= np.linalg.norm(z, axis=1, keepdims=True)
    return z * u[:, N:] ** (1.0 / N)


def unit_ball_volume(N):
    return math.pi ** (N / 2) / math.gamma(N / 2 + 1)


def weight_integral(x, r, bases, xi, pts, power=1.0):
    """MC integral of d(y, F)^{power xi} over B(x, r)."""
    y = np.asarray(x, dtype=float) + r * pts
    w = distance_to_union(y, bases) ** (power * xi)
    return float(w.mean() * unit_ball_volume(pts.shape[1]) * r ** pts.shape[1])


def weight_exact_origin(N, r, xi):
    """w(B(0, r)) for F = {0}: S_{N-1} r^{N+xi}/(N+xi)."""
    s = 2 * math.pi ** (N / 2) / math.gamma(N / 2)
    return s * r ** (N + xi) / (N + xi)


def check_weight(constraints, xi, samples=40, radii=None, points=4096, seed=DEFAULT_SEED,
                 label="F", C=None, doubling=None, a2=None):
    """Two-regime volume formula, doubling and A_2 ratio for w = d(x, F)^xi."""
    bases = subspace_union(constraints)
    N = bases[0].shape[0]
    for q in bases:
        if q.shape[1] < 2 and not (q.shape[1] == N):
            raise SymbolError("each subspace needs codimension >= 2")
    radii = np.geomspace(1e-2, 10.0, 7) if radii is None else np.asarray(radii, dtype=float)
    g = _gen(seed)
    pts = ball_points(N, points, seed)
    xs = _unit(g, (samples, N)) * _loguniform(g, (samples, 1), 1e-1, 1e1)
    comp, dbl, a2r = [], [], []
    for x in xs:
        delta = float(distance_to_union(x[None], bases)[0])
        for r in radii:
            wB = weight_integral(x, r, bases, xi, pts)
            model = delta ** xi * r ** N if r < delta / 2 else r ** (N + xi)
            q = wB / model
            comp.append(max(q, 1 / q))
            dbl.append(weight_integral(x, 2 * r, bases, xi, pts) / wB)
            winv = weight_integral(x, r, bases, xi, pts, power=-1.0)
            vol = unit_ball_volume(N) * r ** N
            a2r.append(wB * winv / vol ** 2)
    base = f"weight:{label}:xi={xi:g}"
    total = len(comp)
    subs = [CheckReport(base + "/doubling", total, float(max(dbl)),
                        _resolve(base + "/doubling", doubling, seed), seed),
            CheckReport(base + "/A2", total, float(max(a2r)), _resolve(base + "/A2", a2, seed), seed)]
    return CheckReport(base, total, float(max(comp)), _resolve(base, C, seed), seed, subchecks=subs,
                       details={"radii": radii, "N": N})


# envelope domination ---------------------------------------------------------------

def required_envelope_constant(value, t, x, y, d, xi):
    """Smallest C with value <= E_C(t, x, y) (E_C is increasing in C)."""
    from scipy.optimize import brentq
    from ..estimators import log_envelope_E
    f = lambda lc: float(log_envelope_E(t, x, y, math.exp(lc), d, xi)) - math.log(value)
    lo, hi = -30.0, 30.0
    if f(lo) >= 0:
        return math.exp(lo)
    if f(hi) < 0:
        return math.inf
    return math.exp(brentq(f, lo, hi, xtol=1e-10))


def check_envelope(params=None, times=(0.01, 0.1, 1.0, 10.0), paths=5000, rho=0.25,
                   seed=DEFAULT_SEED, C=None):
    """Heat-kernel KDE values dominated by E_C with one frozen C (n = 2)."""
    from ..diffusion import SdeConfig, simulate_ensemble
    from ..estimators import heat_kernel_density, GridSpec
    params = SymbolParams(2, 2, 1.0) if params is None else params
    if params.n != 2:
        raise SymbolError("the envelope check is implemented for n = 2")
    d, xi = params.d, params.xi
    x0 = np.zeros(d)
    x0[0] = 1.0
    cfg = SdeConfig(params, dt_base=min(times) / 20, t_max=max(times), seed=seed,
                    paths=paths, dt_max=max(times) / 20)
    ens = simulate_ensemble(x0[None], cfg, checkpoints=times)
    need, used = [], 0
    for t in times:
        scale = t ** (1.0 / (2 - xi)) if t > 1 else math.sqrt(t)
        ang = np.linspace(0, 2 * math.pi, 12, endpoint=False)
        pts = []
        for rr in (0.5, 1.0, 2.0, 3.0):
            for a in ang:
                y = x0.copy()
                y[:2] += rr * scale * np.array([math.cos(a), math.sin(a)])
                if np.linalg.norm(y - x0) >= rho * np.linalg.norm(x0):
                    pts.append(y)
        if not pts:
            continue
        grid = heat_kernel_density(x0[None], t, cfg, GridSpec(np.array(pts)), ensemble=ens)
        for y, v, s in zip(grid.centers, grid.values, grid.stderr):
            if v > 3 * s and v > 0:
                need.append(required_envelope_constant(v, t, x0, y, d, xi))
                used += 1
    name = calibration.key("envelope", params)
    return CheckReport(name, used, float(max(need)), _resolve(name, C, seed), seed)
