"""Quadrature of the convolution inequalities with a singular kernel |x - y|^(2-xi-ld).

All integrals use polar coordinates centred at the singularity; by rotation
invariance only the angle to a fixed axis matters, leaving
|S^{d-2}| int sin^{d-2}(phi) dphi in each R^d factor.
"""
import math
import warnings

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicSpline

from ..symbol import SymbolError
from .report import CheckReport

STABILITY = 1.05


class QuadratureError(RuntimeError):
    pass


def sphere_area(k):
    """Surface area of the unit sphere S^k in R^{k+1}."""
    return 2 * math.pi ** ((k + 1) / 2) / math.gamma((k + 1) / 2)


def _check(l, d, xi):
    if l not in (1, 2):
        raise SymbolError("l must be 1 or 2")
    if not 2 - xi - d < 0:
        raise SymbolError("need 2 - xi - d < 0")


def ray_interval(r, cphi, R=1.0):
    """Range of t >= 0 with |x + t u| <= R, for |x| = r and cos(angle(x, u)) = cphi."""
    a = r * cphi
    disc = a * a - r * r + R * R
    if disc < 0:
        return 0.0, 0.0
    root = math.sqrt(disc)
    return max(0.0, -a - root), max(0.0, -a + root)


def _phi_range(r, R=1.0):
    if r <= R:
        return 0.0, math.pi
    return math.pi - math.asin(R / r), math.pi


def bai_lhs_l1(r, d, xi, epsrel=1e-12):
    """int_{|y|<=1} |x - y|^{2-xi-d} dy for |x| = r, by adaptive quadrature."""
    w = sphere_area(d - 2)
    p = 2.0 - xi

    def f(phi):
        lo, hi = ray_interval(r, math.cos(phi))
        return math.sin(phi) ** (d - 2) * (hi ** p - lo ** p) / p

    a, b = _phi_range(r)
    pts = [math.pi / 2] if r <= 1 else None
    with warnings.catch_warnings():
        # asking for 1e-12 reports roundoff; the refinement subcheck guards accuracy
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        val, _ = integrate.quad(f, a, b, epsabs=0.0, epsrel=epsrel, limit=400, points=pts)
    return w * val


def _gl(a, b, n):
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (b - a) * x + 0.5 * (a + b), 0.5 * (b - a) * w


def _composite_gl(a, b, panels, order):
    xs, ws = [], []
    edges = np.linspace(a, b, panels + 1)
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = _gl(lo, hi, order)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def _graded(a, b, at, n, depth=10):
    """Composite Gauss-Legendre on [a, b] with panels refined geometrically at ``at``."""
    h = max(at - a, b - at)
    edges = {a, b}
    if a < at < b:
        edges.add(at)
    for k in range(1, depth + 1):
        for e in (at - h * 2.0 ** -k, at + h * 2.0 ** -k):
            if a < e < b:
                edges.add(e)
    edges = sorted(edges)
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = _gl(lo, hi, n)
        xs.append(x)
        ws.append(w)
    return np.concatenate(xs), np.concatenate(ws)


def _ray_angles(r, n, R=1.0):
    """Angle nodes for rays from |x| = r through the ball; kinks at pi/2 or the tangent."""
    a, b = _phi_range(r, R)
    return _graded(a, b, math.pi / 2 if r <= R else a, n)


def _angular(d, n, grade=14):
    """Angle nodes graded geometrically toward pi, where the kink of (1 + |y|) sits."""
    edges = [0.0, math.pi / 2] + [math.pi - math.pi * 2.0 ** -k for k in range(2, grade)] + [math.pi]
    xs, ws = [], []
    for lo, hi in zip(edges[:-1], edges[1:]):
        x, w = _gl(lo, hi, n)
        xs.append(x)
        ws.append(w)
    th, wt = np.concatenate(xs), np.concatenate(ws)
    return th, wt * np.sin(th) ** (d - 2) * sphere_area(d - 2)


def _radial_log(scale, n_panels, order, lo=-25.0, hi=25.0, kink=None):
    """Nodes rho = scale e^u with weights including the Jacobian rho.

    ``kink`` (a radius) becomes a panel edge, with graded panels on each side.
    """
    edges = list(np.linspace(lo, hi, n_panels + 1))
    if kink is not None and kink > 0:
        uk = math.log(kink / scale)
        if lo < uk < hi:
            extra = [uk + sgn * 2.0 ** -k for k in range(1, 12) for sgn in (-1, 1)]
            edges = sorted(set(e for e in edges + extra + [uk] if lo <= e <= hi))
    xs, ws = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        x, w = _gl(a, b, order)
        xs.append(x)
        ws.append(w)
    u, w = np.concatenate(xs), np.concatenate(ws)
    rho = scale * np.exp(u)
    return rho, w * rho


def prc_lhs(r, k, l, d, xi, level=1):
    """int_{R^d} (k + |x - y|)^{2-xi-ld} (1 + |y|)^{2-xi-d} dy for |x| = r."""
    th, wt = _angular(d, 6 * level)
    rho, wr = _radial_log(max(k, 1e-3), 40 * level, 8, lo=-20.0, hi=20.0, kink=r)
    R, TH = np.meshgrid(rho, th, indexing="ij")
    dist = np.sqrt(np.maximum(r * r + R * R + 2 * r * R * np.cos(TH), 0.0))
    f = R ** (d - 1) * (k + R) ** (2 - xi - l * d) * (1 + dist) ** (2 - xi - d)
    return float(np.einsum("i,j,ij->", wr, wt, f))


def prc_rhs(r, k, l, d, xi):
    return k ** (2 - xi - (l - 1) * d) * (1 + r) ** (2 - xi - d)


class _Jtable:
    """J(s) = int_{R^d} (|x1 - y|^2 + s^2)^{(2-xi-2d)/2} (1 + |y|)^{2-xi-d} dy, |x1| = r1."""

    def __init__(self, r1, d, xi, level=1, smin=1e-4, smax=8.0, count=60):
        self.d, self.xi = d, xi
        th, wt = _angular(d, 4 * level)
        s = np.geomspace(smin, smax, count * level)
        vals = np.empty(s.size)
        e1 = (2 - xi - 2 * d) / 2
        e2 = 2 - xi - d
        c = np.cos(th)
        for k, sk in enumerate(s):
            rho, wr = _radial_log(sk, 30 * level, 8, lo=-20.0, hi=math.log(1e7 / sk), kink=r1)
            R = rho[:, None]
            dist = np.sqrt(np.maximum(r1 * r1 + R * R + 2 * r1 * R * c[None, :], 0.0))
            f = R ** (d - 1) * (R * R + sk * sk) ** e1 * (1 + dist) ** e2
            vals[k] = np.einsum("i,j,ij->", wr, wt, f)
        self.ls, self.lv = np.log(s), np.log(vals)
        self._spline = CubicSpline(self.ls, self.lv)

    def __call__(self, s):
        ls = np.log(s)
        out = self._spline(np.clip(ls, self.ls[0], self.ls[-1]))
        lo = ls < self.ls[0]
        if np.any(lo):
            slope = (self.lv[1] - self.lv[0]) / (self.ls[1] - self.ls[0])
            out[lo] = self.lv[0] + slope * (ls[lo] - self.ls[0])
        hi = ls > self.ls[-1]
        if np.any(hi):
            raise QuadratureError("J table range exceeded")
        return np.exp(out)


def bai_lhs_l2(r1, r2, d, xi, level=1, table=None):
    """int_{R^{2d}} |x - y|^{2-xi-2d} (1 + |y_1|)^{2-xi-d} 1_{|y_2|<=1} dy, |x_i| = r_i."""
    J = table if table is not None else _Jtable(r1, d, xi, level=level, smax=r2 + 1.5)
    phi, wphi = _ray_angles(r2, 6 * level)
    p = 2.0 - xi
    total = 0.0
    uq, uw = _gl(0.0, 1.0, 48 * level)
    for ph, wp in zip(phi, wphi):
        lo, hi = ray_interval(r2, math.cos(ph))
        if hi <= lo:
            continue
        # u = s^{2-xi} removes the s^{1-xi} endpoint singularity
        ua, ub = lo ** p, hi ** p
        u = ua + (ub - ua) * uq
        s = u ** (1.0 / p)
        f = s ** (d - 1) * J(s) / (p * s ** (1 - xi))
        total += wp * math.sin(ph) ** (d - 2) * (ub - ua) * float(np.dot(uw, f))
    return sphere_area(d - 2) * total


def bai_rhs(xs, d, xi):
    return float(np.prod([(1 + r) ** (2 - xi - d) for r in xs]))


def default_grid(l, fine=False):
    """Coarse or refined x-grid; radii inside the unit ball are spaced linearly."""
    inner = np.linspace(0.0, 1.5, 25 if fine else 13)
    outer = [3.0, 10.0, 100.0] if fine else [10.0, 100.0]
    radial = np.concatenate([inner, outer])
    if l == 1:
        return [(r,) for r in radial]
    r1 = np.geomspace(0.05, 500.0, 7 if fine else 4)
    return [(a, b) for a in r1 for b in radial]


def bai_ratios(l, d, xi, grid, level=1):
    out = []
    if l == 1:
        eps = 1e-12 if level > 1 else 1e-8
        for (r,) in grid:
            out.append(bai_lhs_l1(r, d, xi, epsrel=eps) / bai_rhs([r], d, xi))
        return np.array(out)
    tables = {}
    for r1, r2 in grid:
        smax = max(b for _, b in grid) + 1.5
        if r1 not in tables:
            tables[r1] = _Jtable(r1, d, xi, level=level, smax=smax)
        out.append(bai_lhs_l2(r1, r2, d, xi, level=level, table=tables[r1]) / bai_rhs([r1, r2], d, xi))
    return np.array(out)


def check_bai(l, d, xi, grid=None, fine_grid=None, seed=0):
    """sup over the x-grid of LHS/RHS; passes if the sup is stable under refinement.

    ``max_ratio`` is the sup on the refined grid and the constant is
    STABILITY times the sup on the coarse grid.  A subcheck compares the
    coarse-grid ratios at quadrature levels 1 and 2.
    """
    _check(l, d, xi)
    grid = default_grid(l) if grid is None else grid
    fine_grid = default_grid(l, fine=True) if fine_grid is None else fine_grid
    coarse = bai_ratios(l, d, xi, grid)
    fine = bai_ratios(l, d, xi, fine_grid)
    refined = bai_ratios(l, d, xi, grid, level=2)
    tol = 1e-6 if l == 1 else 1e-3
    change = float(np.max(np.abs(refined - coarse) / coarse))
    if change > 1e-2:
        raise QuadratureError(f"quadrature refinement changed the ratios by {change:.3g}")
    sub = CheckReport(f"bai:l={l}/quadrature", len(grid), change, tol, seed)
    name = f"bai:l={l}:d={d}:xi={xi:g}"
    return CheckReport(name, len(fine_grid), float(fine.max()), STABILITY * float(coarse.max()),
                       seed, subchecks=[sub],
                       details={"sup_coarse": float(coarse.max()), "sup_fine": float(fine.max())})


def check_prc(l, d, xi, k=1.0, radii=None, fine_radii=None, seed=0):
    """Same stabilization protocol for the auxiliary convolution inequality."""
    if l < 2:
        raise SymbolError("the auxiliary inequality needs l >= 2")
    radii = np.geomspace(0.01, 100.0, 5) if radii is None else radii
    fine_radii = np.geomspace(0.01, 100.0, 9) if fine_radii is None else fine_radii
    ratio = lambda r, level=1: prc_lhs(r, k, l, d, xi, level) / prc_rhs(r, k, l, d, xi)
    coarse = np.array([ratio(r) for r in radii])
    fine = np.array([ratio(r) for r in fine_radii])
    refined = np.array([ratio(r, 2) for r in radii])
    change = float(np.max(np.abs(refined - coarse) / coarse))
    sub = CheckReport(f"prc:l={l}/quadrature", len(radii), change, 1e-3, seed)
    return CheckReport(f"prc:l={l}:k={k:g}:d={d}:xi={xi:g}", len(fine_radii), float(fine.max()),
                       STABILITY * float(coarse.max()), seed, subchecks=[sub],
                       details={"sup_coarse": float(coarse.max()), "sup_fine": float(fine.max())})
