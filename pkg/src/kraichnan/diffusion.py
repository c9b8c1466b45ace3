"""Euler-Maruyama simulation of the diffusion generated by div(A grad), A = sigma(M_n).

Paths are advanced in fixed-size chunks with per-path adaptive steps.  All
per-path arithmetic is elementwise, and noise is drawn from counter-based
streams keyed by (seed, path index), so an ensemble is bit-identical for any
worker count.
"""
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, asdict
import hashlib
import json
import os

import numpy as np

from . import rng
from .symbol import (Configuration, SymbolParams, SymbolError, SingularityError,
                     symbol_batch, window_sums, degeneration_distance_batch,
                     metric_surrogate_batch, _blocks, _block_terms)

CHUNK = 32768
FLAG_LIMIT = 0.01
CACHE_ENV = "KRAICHNAN_CACHE"
CACHE_FORMAT = 1


class EngineError(RuntimeError):
    pass


class CacheCorruptionError(EngineError):
    pass


@dataclass(frozen=True)
class SdeConfig:
    params: SymbolParams
    dt_base: float
    t_max: float
    adapt_floor: float = 1e-7
    seed: int = 0
    paths: int = 1000
    dt_max: float = None

    def __post_init__(self):
        if self.dt_max is None:
            object.__setattr__(self, "dt_max", float(self.dt_base))
        if not self.dt_max >= self.dt_base:
            raise ValueError("dt_max must be >= dt_base")
        if not self.dt_base > 0:
            raise ValueError("dt_base must be positive")
        if not 0 < self.adapt_floor <= self.dt_base:
            raise ValueError("need 0 < adapt_floor <= dt_base")
        if not self.t_max > 0:
            raise ValueError("t_max must be positive")
        if int(self.paths) < 1:
            raise ValueError("paths must be >= 1")
        object.__setattr__(self, "paths", int(self.paths))
        object.__setattr__(self, "seed", int(self.seed))
        rng.seed_key(self.seed)

    def replace(self, **kw):
        vals = dict(params=self.params, dt_base=self.dt_base, t_max=self.t_max,
                    adapt_floor=self.adapt_floor, seed=self.seed, paths=self.paths,
                    dt_max=self.dt_max)
        vals.update(kw)
        return SdeConfig(**vals)

    def to_dict(self):
        out = asdict(self)
        out["params"] = asdict(self.params)
        return out


@dataclass(frozen=True)
class Observable:
    """Scalar function of a batch of configurations, (P, n-1, d) -> (P,).

    ``key`` identifies the observable in cache keys; observables without a
    key make an ensemble uncacheable.
    """

    fn: object
    key: str = None

    def __call__(self, b):
        return self.fn(b)


@dataclass(frozen=True)
class BinnedObservable:
    """Maps a batch to integer bin indices in [0, nbins); -1 means no bin."""

    fn: object
    nbins: int
    key: str = None

    def __call__(self, b):
        return self.fn(b)


@dataclass
class PathEnsemble:
    endpoints: np.ndarray
    occupation: np.ndarray
    binned: list
    checkpoints: np.ndarray
    occupation_history: np.ndarray
    snapshots: np.ndarray
    sup_distance: np.ndarray
    flagged: np.ndarray
    meta: dict = field(default_factory=dict)

    @property
    def paths(self):
        return self.endpoints.shape[0]

    @property
    def good(self):
        return ~self.flagged

    def snapshot(self, t):
        k = int(np.argmin(np.abs(self.checkpoints - t)))
        if not np.isclose(self.checkpoints[k], t, rtol=1e-12, atol=0):
            raise EngineError(f"t = {t} is not a recorded checkpoint")
        return self.snapshots[k]


# coefficients ---------------------------------------------------------------

def _d_div_batch(x, d, xi):
    """sum_a d/dx_a d_ab(x) from the analytic gradient terms; x must be nonzero."""
    c = xi / (d - 1)
    r2 = np.sum(x * x, axis=-1)
    r = np.sqrt(r2)
    p2 = r ** (xi - 2)
    p4 = r ** (xi - 4)
    out = np.zeros(x.shape)
    for b in range(d):
        acc = np.zeros(x.shape[:-1])
        for a in range(d):
            # g[a, a, b]; the k == a term is always present
            val = -c * (xi - 2) * p4 * x[..., a] * x[..., a] * x[..., b]
            val = val - c * p2 * x[..., b]
            if a == b:
                val = val + (1.0 + c) * xi * p2 * x[..., a]
                val = val - c * p2 * x[..., a]
            acc = acc + val
        out[..., b] = acc
    return out


def _drift_coefficients(m):
    """coef[(w, b0)] = sum over blocks a in window w of the A-block (a, b0) weight of d(x_w)."""
    coef = {}
    for (i0, j0), terms in _block_terms(m).items():
        scale = 1.0 if i0 == j0 else 0.5
        pairs = [(i0, j0)] if i0 == j0 else [(i0, j0), (j0, i0)]
        for sgn, w in terms:
            for a, b0 in pairs:
                if w[0] <= a <= w[1]:
                    coef[(w, b0)] = coef.get((w, b0), 0.0) + sgn * scale
    return {k: v for k, v in coef.items() if v != 0.0}


def drift_batch(b, params):
    """Ito drift b_j = sum_i d_i A_ij for a batch; returns (drift, singular mask)."""
    b = np.asarray(b, dtype=float)
    m, d, xi = params.m, params.d, params.xi
    W = window_sums(b)
    out = np.zeros(b.shape)
    singular = np.zeros(b.shape[:-2], dtype=bool)
    divs = {}
    for w, s in W.items():
        r2 = np.sum(s * s, axis=-1)
        zero = r2 == 0
        if np.any(zero):
            if xi <= 1:
                singular |= zero
            s = np.where(zero[..., None], 1.0, s)
        div = _d_div_batch(s, d, xi)
        divs[w] = np.where(zero[..., None], 0.0, div)
    for (w, b0), cf in sorted(_drift_coefficients(m).items()):
        out[..., b0, :] += cf * divs[w]
    return out.reshape(b.shape[:-2] + (m * d,)), singular


def drift(x, params):
    b = _blocks(x)
    vec, singular = drift_batch(b, params)
    if np.any(singular):
        raise SingularityError("drift is singular on the degeneration set for xi <= 1")
    return vec


def noise_batch(b, params):
    """Symmetric PSD square roots of 2A for a batch, (..., D, D)."""
    b = np.asarray(b, dtype=float)
    if params.n == 2:
        return _noise_pair(b[..., 0, :], params.d, params.xi)
    A = symbol_batch(b, params)
    lam, V = np.linalg.eigh(2.0 * A)
    root = np.sqrt(np.maximum(lam, 0.0))
    S = np.zeros(A.shape)
    for k in range(A.shape[-1]):
        vk = V[..., :, k]
        S += (root[..., k, None, None] * vk[..., :, None]) * vk[..., None, :]
    return S


def _noise_pair(x, d, xi):
    # sqrt(2)|x|^{xi/2} [sqrt(1+c)(I - uu) + uu]
    c = xi / (d - 1)
    r = np.sqrt(np.sum(x * x, axis=-1))
    pos = r > 0
    safe = np.where(pos, r, 1.0)
    amp = np.where(pos, np.sqrt(2.0) * safe ** (xi / 2), 0.0)
    u = x / safe[..., None]
    q = np.sqrt(1.0 + c)
    S = np.empty(x.shape + (d,))
    for a in range(d):
        for bb in range(d):
            val = (1.0 - q) * u[..., a] * u[..., bb]
            if a == bb:
                val = val + q
            S[..., a, bb] = amp * val
    return S


def noise_factor(x, params):
    b = _blocks(x)
    if not np.all(np.isfinite(b)):
        raise SymbolError("non-finite input")
    return noise_batch(b, params)


def adaptive_dt_batch(dist, cfg):
    # with dt_max == dt_base this is clamp(dt_base min(1, dist^(2-xi)), floor, dt_base)
    xi = cfg.params.xi
    dt = cfg.dt_base * np.minimum(cfg.dt_max / cfg.dt_base, dist ** (2.0 - xi))
    return np.clip(dt, cfg.adapt_floor, cfg.dt_max)


def adaptive_dt(x, cfg):
    dist = degeneration_distance_batch(_blocks(x))
    return float(adaptive_dt_batch(dist, cfg))


# engine ---------------------------------------------------------------------

def _matvec(S, z):
    out = S[..., :, 0] * z[..., None, 0]
    for k in range(1, z.shape[-1]):
        out = out + S[..., :, k] * z[..., None, k]
    return out


def _run_chunk(idx, x0, cfg, scalars, binned, ck, split):
    p = cfg.params
    m, d, D = p.m, p.d, p.dim
    P = idx.shape[0]
    nck = ck.shape[0]
    state = np.broadcast_to(x0, (P, m, d)).copy()
    t = np.zeros(P)
    step = np.zeros(P, dtype=np.uint64)
    nxt = np.zeros(P, dtype=np.int64)
    active = np.ones(P, dtype=bool)
    flagged = np.zeros(P, dtype=bool)
    sup = np.zeros(P)
    occ = np.zeros((P, len(scalars)))
    hist = np.zeros((nck, P, len(scalars)))
    bins = [np.zeros((P, ob.nbins)) for ob in binned]
    snaps = np.zeros((nck, P, m, d))
    stream = idx.astype(np.uint32)
    checked = False
    while True:
        ia = np.nonzero(active)[0]
        if ia.size == 0:
            break
        x = state[ia]
        dist = degeneration_distance_batch(x)
        dt = adaptive_dt_batch(dist, cfg)
        target = ck[nxt[ia]]
        remaining = target - t[ia]
        hit = dt >= remaining
        dt = np.where(hit, remaining, dt)
        for k, ob in enumerate(scalars):
            occ[ia, k] += np.asarray(ob(x), dtype=float) * dt
        for k, ob in enumerate(binned):
            bi = np.asarray(ob(x))
            sel = bi >= 0
            bins[k][ia[sel], bi[sel]] += dt[sel]
        mu, singular = drift_batch(x, p)
        S = noise_batch(x, p)
        if not checked:
            A = symbol_batch(x[:4], p)
            SS = np.einsum("pij,pkj->pik", S[:4], S[:4])
            err = np.max(np.abs(SS - 2 * A)) if A.size else 0.0
            if err > 1e-8 * max(np.max(np.abs(A)), 1e-300):
                raise EngineError(f"noise factor check failed: |SS^T - 2A| = {err:g}")
            checked = True
        z = rng.normals(cfg.seed, stream[ia], step[ia], D)
        inc = mu * dt[:, None] + np.sqrt(dt)[:, None] * _matvec(S, z)
        xn = x + inc.reshape(x.shape)
        bad = singular | ~np.all(np.isfinite(xn), axis=(-1, -2))
        if np.any(bad):
            flagged[ia[bad]] = True
            active[ia[bad]] = False
        ok = ~bad
        io = ia[ok]
        state[io] = xn[ok]
        sup[io] = np.maximum(sup[io], metric_surrogate_batch(xn[ok] - x0, split, p.xi))
        t[io] = np.where(hit[ok], target[ok], t[io] + dt[ok])
        step[io] += np.uint64(1)
        ih = io[hit[ok]]
        if ih.size:
            kk = nxt[ih]
            snaps[kk, ih] = state[ih]
            hist[kk, ih] = occ[ih]
            nxt[ih] += 1
            done = nxt[ih] >= nck
            active[ih[done]] = False
    # frozen paths keep their last state in later snapshots
    for i in np.nonzero(flagged)[0]:
        for k in range(nxt[i], nck):
            snaps[k, i] = state[i]
            hist[k, i] = occ[i]
    return state, occ, bins, hist, snaps, sup, flagged


def _cache_key(x0, cfg, observables, ck, split):
    keys = [getattr(o, "key", None) for o in observables]
    if any(k is None for k in keys):
        return None
    payload = {
        "format": CACHE_FORMAT,
        "sde": cfg.to_dict(),
        "x0": [float(v).hex() for v in np.asarray(x0).reshape(-1)],
        "observables": keys,
        "nbins": [getattr(o, "nbins", 0) for o in observables],
        "checkpoints": [float(v).hex() for v in ck],
        "split": int(split),
    }
    return config_hash(payload)


def config_hash(payload):
    blob = json.dumps(payload, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


_ARRAYS = ("endpoints", "occupation", "checkpoints", "occupation_history",
           "snapshots", "sup_distance", "flagged")


def _digest(arrays):
    h = hashlib.sha256()
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        h.update(name.encode())
        h.update(str(a.dtype).encode())
        h.update(str(a.shape).encode())
        h.update(a.tobytes())
    return h.hexdigest()


def _save(path, ens):
    arrays = {k: getattr(ens, k) for k in _ARRAYS}
    for i, b in enumerate(ens.binned):
        arrays[f"binned_{i}"] = b
    meta = dict(ens.meta, digest=_digest(arrays), nbinned=len(ens.binned))
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta, sort_keys=True)), **arrays)
    os.replace(tmp, path)


def _load(path, key):
    try:
        with np.load(path, allow_pickle=False) as f:
            meta = json.loads(str(f["meta"]))
            arrays = {k: f[k] for k in f.files if k != "meta"}
    except Exception as exc:
        raise CacheCorruptionError(f"unreadable cache file {path}: {exc}") from exc
    digest = meta.pop("digest", None)
    if digest != _digest(arrays) or meta.get("config_hash") != key:
        raise CacheCorruptionError(f"cache file {path} failed its integrity check")
    nb = meta.pop("nbinned")
    return PathEnsemble(binned=[arrays[f"binned_{i}"] for i in range(nb)],
                        meta=meta, **{k: arrays[k] for k in _ARRAYS})


def cache_dir(explicit=None):
    return explicit if explicit is not None else os.environ.get(CACHE_ENV)


def simulate_ensemble(x0, cfg, observables=(), checkpoints=None, split=0,
                      workers=1, cache=None):
    """Simulate ``cfg.paths`` trajectories from x0 up to ``cfg.t_max``.

    Parameters
    ----------
    x0 : Configuration or array (n-1, d)
        Start point; must lie off the degeneration set.
    observables : sequence of Observable / BinnedObservable
        Scalar observables accumulate per-path occupation integrals (also
        recorded at every checkpoint); binned ones accumulate per-bin time.
    checkpoints : sequence of times, optional
        Times at which states and scalar occupations are recorded; t_max is
        always included.
    split : int
        Number of leading blocks measured by the degenerate part of the
        surrogate metric used for ``sup_distance``.
    workers : int
        Threads used to process chunks; results do not depend on it.
    cache : str, optional
        Directory of the ensemble cache (default: $KRAICHNAN_CACHE if set).
    """
    p = cfg.params
    b0 = _blocks(x0)
    if b0.shape != (p.m, p.d):
        raise SymbolError(f"x0 shape {b0.shape} does not match {(p.m, p.d)}")
    if not np.all(np.isfinite(b0)):
        raise SymbolError("x0 must be finite")
    if degeneration_distance_batch(b0) == 0:
        raise SingularityError("starting on the degeneration set is not supported")
    ck = np.unique(np.append(np.asarray(checkpoints if checkpoints is not None else [], float),
                             cfg.t_max))
    if ck[0] <= 0 or ck[-1] > cfg.t_max:
        raise ValueError("checkpoints must lie in (0, t_max]")
    scalars = [o for o in observables if not isinstance(o, BinnedObservable)]
    binned = [o for o in observables if isinstance(o, BinnedObservable)]
    ordered = scalars + binned
    cdir = cache_dir(cache)
    key = _cache_key(b0, cfg, ordered, ck, split)
    path = None
    if cdir and key:
        path = os.path.join(cdir, f"{key}.npz")
        if os.path.exists(path):
            return _load(path, key)

    starts = list(range(0, cfg.paths, CHUNK))
    jobs = [np.arange(s, min(s + CHUNK, cfg.paths)) for s in starts]
    run = lambda idx: _run_chunk(idx, b0, cfg, scalars, binned, ck, split)
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(max_workers=int(workers)) as ex:
            parts = list(ex.map(run, jobs))
    else:
        parts = [run(j) for j in jobs]
    state = np.concatenate([q[0] for q in parts])
    occ = np.concatenate([q[1] for q in parts])
    bins = [np.concatenate([q[2][k] for q in parts]) for k in range(len(binned))]
    hist = np.concatenate([q[3] for q in parts], axis=1)
    snaps = np.concatenate([q[4] for q in parts], axis=1)
    sup = np.concatenate([q[5] for q in parts])
    flagged = np.concatenate([q[6] for q in parts])
    nflag = int(flagged.sum())
    if nflag > FLAG_LIMIT * cfg.paths:
        raise EngineError(f"{nflag} of {cfg.paths} paths flagged (non-finite or singular)")
    meta = {"seed": cfg.seed, "config_hash": key, "paths": cfg.paths,
            "flagged": nflag, "t_max": cfg.t_max, "split": int(split),
            "observables": [o.key for o in ordered]}
    ens = PathEnsemble(state, occ, bins, ck, hist, snaps, sup, flagged, meta)
    if path is not None:
        os.makedirs(cdir, exist_ok=True)
        _save(path, ens)
    return ens


def exit_tail_probability(y, t, mu, cfg, split=0, ensemble=None, workers=1, cache=None):
    """P(sup_{s<=t} d(X_s, y) >= mu) with its binomial standard error.

    ``mu`` may be an array; one ensemble serves all levels.
    """
    mu = np.asarray(mu, dtype=float)
    if np.any(mu <= 0) or t <= 0:
        raise ValueError("need mu > 0 and t > 0")
    if ensemble is None:
        ensemble = simulate_ensemble(y, cfg.replace(t_max=t), split=split,
                                     workers=workers, cache=cache)
    sup = ensemble.sup_distance[ensemble.good]
    N = sup.shape[0]
    if N == 0:
        raise EngineError("no usable paths")
    pr = np.mean(sup[:, None] >= mu.reshape(-1)[None, :], axis=0).reshape(mu.shape)
    se = np.sqrt(pr * (1 - pr) / N)
    return pr, se
