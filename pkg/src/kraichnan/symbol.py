"""Symbols of the operators M_n: structure function, block assembly, degeneration.

Conventions
-----------
A configuration of ``n`` points ``y_1..y_n`` in R^d is stored in reduced
coordinates ``x_i = y_i - y_{i+1}`` (``i = 1..n-1``), as an array of shape
``(n-1, d)``.  Window indices ``i, j`` in the public API are 1-based and
inclusive so that ``partial_sum(i, j) = x_i + ... + x_j``.

The symbol matrix has diagonal blocks ``d(x_i)`` and off-diagonal blocks
``B_ij / 2`` for ``i < j``, so that the matrix quadratic form equals the sum
over ``i <= j`` of ``<v_i, B_ij v_j>``.
"""
from dataclasses import dataclass, field
from itertools import permutations
import math

import numpy as np

MAX_DIM = 64
MAX_SYMMETRY_N = 7
DEFAULT_TOL_EIG = 1e-10


class SymbolError(ValueError):
    pass


class SingularityError(SymbolError):
    """Evaluation at a point where the requested quantity is singular."""


class ToleranceError(SymbolError):
    """Eigenvalue counting is ambiguous at the configured tolerance."""


class CapacityError(SymbolError):
    pass


@dataclass(frozen=True)
class SymbolParams:
    n: int
    d: int
    xi: float

    def __post_init__(self):
        if int(self.n) != self.n or self.n < 2:
            raise SymbolError(f"n must be an integer >= 2, got {self.n!r}")
        if int(self.d) != self.d or self.d < 2:
            raise SymbolError(f"d must be an integer >= 2, got {self.d!r}")
        if not (0.0 < float(self.xi) < 2.0):
            raise SymbolError(f"xi must lie in (0, 2), got {self.xi!r}")
        object.__setattr__(self, "n", int(self.n))
        object.__setattr__(self, "d", int(self.d))
        object.__setattr__(self, "xi", float(self.xi))
        if (self.n - 1) * self.d > MAX_DIM:
            raise CapacityError(f"(n-1)*d = {(self.n - 1) * self.d} exceeds {MAX_DIM}")

    @property
    def m(self):
        """Number of reduced blocks, n - 1."""
        return self.n - 1

    @property
    def dim(self):
        return (self.n - 1) * self.d

    @property
    def c(self):
        return self.xi / (self.d - 1)

    def with_n(self, n):
        return SymbolParams(n, self.d, self.xi)


@dataclass(frozen=True)
class Configuration:
    """Point of reduced coordinate space, ``blocks`` of shape (n-1, d)."""

    blocks: np.ndarray

    def __post_init__(self):
        b = np.array(self.blocks, dtype=float)
        if b.ndim == 1:
            b = b[None, :]
        if b.ndim != 2 or b.size == 0:
            raise SymbolError(f"blocks must have shape (n-1, d), got {b.shape}")
        b.setflags(write=False)
        object.__setattr__(self, "blocks", b)

    @classmethod
    def from_flat(cls, flat, d):
        flat = np.asarray(flat, dtype=float)
        if flat.size % d:
            raise SymbolError(f"flat vector of length {flat.size} is not a multiple of d={d}")
        return cls(flat.reshape(-1, d))

    @property
    def n(self):
        return self.blocks.shape[0] + 1

    @property
    def d(self):
        return self.blocks.shape[1]

    @property
    def flat(self):
        return self.blocks.reshape(-1)

    def partial_sum(self, i, j):
        """x_{i,j} = x_i + ... + x_j (1-based, inclusive); empty windows give 0."""
        m = self.blocks.shape[0]
        if j < i:
            return np.zeros(self.d)
        if i < 1 or j > m:
            raise IndexError(f"window [{i}, {j}] outside [1, {m}]")
        return _window(self.blocks, i - 1, j - 1)

    def subset_sum(self, A):
        """x_A = sum of x_k for k in A (1-based)."""
        out = np.zeros(self.d)
        for k in sorted(A):
            out = out + self.blocks[k - 1]
        return out


# DirectionVector shares the block layout of Configuration.
DirectionVector = Configuration


@dataclass(frozen=True)
class SymbolMatrix:
    entries: np.ndarray
    d: int

    def block(self, i, j):
        """d x d block coupling v_i and v_j (1-based)."""
        d = self.d
        return self.entries[(i - 1) * d:i * d, (j - 1) * d:j * d]

    def form(self, v):
        v = _flat(v)
        return float(v @ self.entries @ v)

    @property
    def norm(self):
        return float(np.max(np.abs(self.entries))) if self.entries.size else 0.0


@dataclass(frozen=True)
class SymmetryMap:
    """Invertible linear map of reduced coordinates, acting blockwise.

    ``coeffs`` is the integer (n-1) x (n-1) block matrix; the full matrix is
    ``kron(coeffs, I_d)``.
    """

    coeffs: np.ndarray
    d: int
    provenance: tuple = field(default=())

    def __post_init__(self):
        c = np.array(self.coeffs, dtype=float)
        if c.ndim != 2 or c.shape[0] != c.shape[1]:
            raise SymbolError("coefficient matrix must be square")
        if abs(np.linalg.det(c)) < 0.5:
            raise SymbolError(f"map is not invertible: {self.provenance}")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def matrix(self):
        return np.kron(self.coeffs, np.eye(self.d))

    @property
    def inverse_transpose(self):
        return np.kron(np.linalg.inv(self.coeffs).T, np.eye(self.d))

    def apply(self, x):
        b = _blocks(x)
        return Configuration(self.coeffs @ b)

    def apply_dual(self, v):
        """v -> L^{-T} v, the contragredient action on direction vectors."""
        b = _blocks(v)
        return Configuration(np.linalg.solve(self.coeffs.T, b))

    @classmethod
    def from_windows(cls, windows, d):
        """Map x -> (x_{i_1,j_1}, ..., x_{i_{n-1},j_{n-1}}) for 1-based windows."""
        m = len(windows)
        c = np.zeros((m, m))
        for row, (i, j) in enumerate(windows):
            if not 1 <= i <= j <= m:
                raise SymbolError(f"bad window {(i, j)} for {m} blocks")
            c[row, i - 1:j] = 1.0
        return cls(c, d, provenance=tuple(tuple(w) for w in windows))


def _blocks(x):
    if isinstance(x, Configuration):
        return x.blocks
    b = np.asarray(x, dtype=float)
    return b[None, :] if b.ndim == 1 else b


def _flat(v):
    if isinstance(v, Configuration):
        return v.flat
    return np.asarray(v, dtype=float).reshape(-1)


def _check_params(params, blocks):
    if not isinstance(params, SymbolParams):
        raise TypeError("params must be a SymbolParams")
    if blocks.shape[-2:] != (params.m, params.d):
        raise SymbolError(f"configuration shape {blocks.shape[-2:]} does not match "
                          f"(n-1, d) = {(params.m, params.d)}")


def _window(b, i0, j0):
    # sum of b[..., i0..j0, :] accumulated left to right
    s = b[..., i0, :]
    for k in range(i0 + 1, j0 + 1):
        s = s + b[..., k, :]
    return s


def window_sums(b):
    """All window sums of a batch: dict (i0, j0) -> array (..., d), 0-based."""
    m = b.shape[-2]
    out = {}
    for i0 in range(m):
        s = b[..., i0, :]
        out[(i0, i0)] = s
        for j0 in range(i0 + 1, m):
            s = s + b[..., j0, :]
            out[(i0, j0)] = s
    return out


# structure function --------------------------------------------------------

def d_batch(x, d, xi):
    """Structure function on a batch of vectors, shape (..., d) -> (..., d, d)."""
    x = np.asarray(x, dtype=float)
    c = xi / (d - 1)
    r2 = x[..., 0] * x[..., 0]
    for a in range(1, d):
        r2 = r2 + x[..., a] * x[..., a]
    r = np.sqrt(r2)
    pos = r > 0
    safe = np.where(pos, r, 1.0)
    rxi = np.where(pos, safe ** xi, 0.0)
    u = x / safe[..., None]
    out = np.empty(x.shape + (d,))
    for a in range(d):
        for b in range(d):
            val = -c * rxi * (u[..., a] * u[..., b])
            if a == b:
                val = val + (1.0 + c) * rxi
            out[..., a, b] = val
    return out


def d_grad_batch(x, d, xi):
    """Gradient g[..., k, a, b] = d/dx_k d_ab(x); requires x != 0."""
    x = np.asarray(x, dtype=float)
    c = xi / (d - 1)
    r2 = x[..., 0] * x[..., 0]
    for a in range(1, d):
        r2 = r2 + x[..., a] * x[..., a]
    if np.any(r2 == 0):
        raise SingularityError("structure-function gradient requested at x = 0")
    r = np.sqrt(r2)
    p2 = r ** (xi - 2)
    p4 = r ** (xi - 4)
    out = np.empty(x.shape + (d, d))
    for k in range(d):
        for a in range(d):
            for b in range(d):
                val = -c * (xi - 2) * p4 * x[..., k] * x[..., a] * x[..., b]
                if a == b:
                    val = val + (1.0 + c) * xi * p2 * x[..., k]
                if k == a:
                    val = val - c * p2 * x[..., b]
                if k == b:
                    val = val - c * p2 * x[..., a]
                out[..., k, a, b] = val
    return out


def eval_d(x, params):
    """Structure function d(x) = |x|^xi((1+c)I - c x^x^), c = xi/(d-1)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.d,):
        raise SymbolError(f"expected a vector of length {params.d}")
    if not np.all(np.isfinite(x)):
        raise SymbolError("non-finite input")
    return d_batch(x, params.d, params.xi)


def eval_d_grad(x, params):
    """Analytic gradient g[k, a, b] = d/dx_k d_ab(x)."""
    x = np.asarray(x, dtype=float)
    if x.shape != (params.d,):
        raise SymbolError(f"expected a vector of length {params.d}")
    return d_grad_batch(x, params.d, params.xi)


def fourier_normalization(d, xi):
    """Constant C with d(x) = C int (1 - cos k.x) |k|^{-d-xi} (1 - k^k^) dk / (2 pi)^d.

    The (2 pi)^{-d} in the measure is needed for C to reproduce the closed form.
    """
    return ((4 * math.pi) ** (d / 2) * 2 ** xi * xi * math.gamma((d + xi + 2) / 2)
            / ((d - 1) * math.gamma((2 - xi) / 2)))


# block assembly -------------------------------------------------------------

def _block_terms(m):
    """For each i0 <= j0, the signed windows making up B_ij (0-based, inclusive)."""
    terms = {}
    for i0 in range(m):
        for j0 in range(i0, m):
            if i0 == j0:
                terms[(i0, j0)] = [(1.0, (i0, i0))]
                continue
            t = [(1.0, (i0, j0)), (-1.0, (i0, j0 - 1)), (-1.0, (i0 + 1, j0))]
            if i0 + 1 <= j0 - 1:
                t.append((1.0, (i0 + 1, j0 - 1)))
            terms[(i0, j0)] = t
    return terms


def symbol_batch(b, params):
    """Symbol matrices for a batch of configurations, (..., n-1, d) -> (..., D, D)."""
    b = np.asarray(b, dtype=float)
    _check_params(params, b)
    m, d = params.m, params.d
    W = window_sums(b)
    Dw = {k: d_batch(v, d, params.xi) for k, v in W.items()}
    out = np.zeros(b.shape[:-2] + (m * d, m * d))
    for (i0, j0), terms in _block_terms(m).items():
        blk = None
        for sgn, w in terms:
            blk = sgn * Dw[w] if blk is None else blk + sgn * Dw[w]
        if i0 != j0:
            blk = 0.5 * blk
        out[..., i0 * d:(i0 + 1) * d, j0 * d:(j0 + 1) * d] = blk
        if i0 != j0:
            out[..., j0 * d:(j0 + 1) * d, i0 * d:(i0 + 1) * d] = np.swapaxes(blk, -1, -2)
    return out


def cross_block(i, j, x, params):
    """B_ij = d(x_{i,j}) - d(x_{i,j-1}) - d(x_{i+1,j}) + d(x_{i+1,j-1})."""
    x = x if isinstance(x, Configuration) else Configuration(x)
    _check_params(params, x.blocks)
    if not (1 <= i <= j <= params.m):
        raise IndexError(f"need 1 <= i <= j <= {params.m}, got ({i}, {j})")
    val = eval_d(x.partial_sum(i, j), params)
    if i == j:
        return val
    val = val - eval_d(x.partial_sum(i, j - 1), params) - eval_d(x.partial_sum(i + 1, j), params)
    return val + eval_d(x.partial_sum(i + 1, j - 1), params)


def gamma_subset(A, x, v, params):
    """gamma_A(x, v) for a nonempty 1-based index set A."""
    A = sorted(set(int(a) for a in A))
    if not A:
        raise SymbolError("A must be nonempty")
    x = x if isinstance(x, Configuration) else Configuration(x)
    vb = _blocks(v)
    _check_params(params, x.blocks)
    lo, hi = A[0], A[-1]
    if lo < 1 or hi > params.m:
        raise IndexError(f"A outside [1, {params.m}]")
    dd = lambda S: eval_d(x.subset_sum(S), params)
    if lo == hi:
        M = dd(A)
    else:
        M = dd(A) - dd(A[1:]) - dd(A[:-1]) + dd(A[1:-1])
    return float(vb[lo - 1] @ M @ vb[hi - 1])


def assemble_symbol(x, params):
    x = x if isinstance(x, Configuration) else Configuration(x)
    return SymbolMatrix(symbol_batch(x.blocks, params), params.d)


def translation_reduce(y):
    """Reduced coordinates x_i = y_i - y_{i+1} of n points y (shape (n, d))."""
    y = np.asarray(y, dtype=float)
    if y.ndim != 2 or y.shape[0] < 2:
        raise SymbolError("need at least two points of shape (n, d)")
    return Configuration(y[:-1] - y[1:])


def lift(x):
    """A right inverse of translation_reduce: points with y_n = 0."""
    b = _blocks(x)
    y = np.zeros((b.shape[0] + 1, b.shape[1]))
    for i in range(b.shape[0] - 1, -1, -1):
        y[i] = y[i + 1] + b[i]
    return y


def scalar_symbol_form(y, v, params):
    """Quadratic form of the unreduced symbol: -sum_{a<b} <v_a, d(y_a - y_b) v_b>."""
    y = np.asarray(y, dtype=float)
    v = np.asarray(v, dtype=float)
    total = 0.0
    for a in range(len(y)):
        for b in range(a + 1, len(y)):
            total -= v[a] @ eval_d(y[a] - y[b], params) @ v[b]
    return float(total)


def reduce_direction(v):
    """Map v in R^{nd} with sum v_a = 0 to reduced directions u_i = sum_{a<=i} v_a."""
    v = np.asarray(v, dtype=float)
    return Configuration(np.cumsum(v, axis=0)[:-1])


def permutation_map(perm, d):
    """SymmetryMap of the point permutation perm (0-based tuple of length n)."""
    n = len(perm)
    c = np.zeros((n - 1, n - 1))
    for k in range(n - 1):
        a, b = perm[k], perm[k + 1]
        # y_a - y_b in terms of x, with y given by the right inverse y_n = 0
        if a < b:
            c[k, a:b] += 1.0
        else:
            c[k, b:a] -= 1.0
    return SymmetryMap(c, d, provenance=tuple(int(p) for p in perm))


def symmetries(n, d=None):
    """All n! permutation-induced maps of reduced coordinates."""
    n = int(n)
    if n > MAX_SYMMETRY_N:
        raise CapacityError(f"symmetries(n) enumerates n! maps; n <= {MAX_SYMMETRY_N} supported")
    if n < 2:
        raise SymbolError("n must be >= 2")
    d = 1 if d is None else int(d)
    return [permutation_map(p, d) for p in permutations(range(n))]


# spectral analysis ----------------------------------------------------------

def min_eigenvalue(S):
    M = S.entries if isinstance(S, SymbolMatrix) else np.asarray(S, dtype=float)
    if not np.all(np.isfinite(M)):
        raise SymbolError("non-finite matrix entries")
    if M.size == 0:
        return 0.0
    return float(np.linalg.eigvalsh(M)[0])


def rank_at(x, params, tol=None):
    """Dimension of the (numerical) kernel of the symbol divided by d.

    ``tol`` defaults to 1e-10 times the matrix max-norm.  Raises
    ToleranceError when the count of small eigenvalues is not a multiple of d.
    """
    S = assemble_symbol(x, params)
    ev = np.linalg.eigvalsh(S.entries)
    if tol is None:
        tol = DEFAULT_TOL_EIG * max(S.norm, np.finfo(float).tiny)
    if tol <= 0:
        raise SymbolError("tol must be positive")
    k = int(np.sum(ev < tol))
    if k % params.d:
        raise ToleranceError(f"{k} eigenvalues below tol={tol:g} is not a multiple of d={params.d}")
    return k // params.d


def degeneration_distance_batch(b):
    m = b.shape[-2]
    best = None
    for (i0, j0), s in window_sums(b).items():
        val = np.sqrt(np.sum(s * s, axis=-1)) / math.sqrt(j0 - i0 + 1)
        best = val if best is None else np.minimum(best, val)
    return best


def degeneration_distance(x):
    """Euclidean distance to the union of the window subspaces {x_{i,j} = 0}."""
    return float(degeneration_distance_batch(_blocks(x)))


def metric_surrogate(x, y, split, xi):
    """sqrt(max(|x1-y1|^(2-xi), |x2-y2|^2)) with the first ``split`` blocks degenerate."""
    bx, by = _blocks(x), _blocks(y)
    if bx.shape != by.shape:
        raise SymbolError("x and y have different shapes")
    return float(metric_surrogate_batch(bx - by, split, xi))


def metric_surrogate_batch(delta, split, xi):
    """Surrogate metric of displacements delta with shape (..., n-1, d)."""
    m = delta.shape[-2]
    if not 0 <= split <= m:
        raise SymbolError(f"split must lie in [0, {m}]")
    a = np.sqrt(np.sum(delta[..., :split, :] ** 2, axis=(-1, -2)))
    b = np.sum(delta[..., split:, :] ** 2, axis=(-1, -2))
    return np.sqrt(np.maximum(a ** (2 - xi), b))


def upper_bound_constant(params, samples=2000, seed=0):
    """C_up ~ sup of the largest eigenvalue of the symbol over the unit sphere."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((samples, params.m, params.d))
    x /= np.sqrt(np.sum(x * x, axis=(-1, -2)))[:, None, None]
    ev = np.linalg.eigvalsh(symbol_batch(x, params))
    return float(ev[:, -1].max())
