"""Named groups of checks, as run by ``kraichnan verify <suite>``."""
import numpy as np

from ..symbol import SymbolParams
from . import checks, quadrature

STRUCTURE_POINTS = (
    ("M3(0,e1)", 3, [[0.0, 0.0], [1.0, 0.0]]),
    ("M4(0,e1,0)", 4, [[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]]),
)


def _degeneration(xi, d, ns, samples, seed):
    return [checks.check_degeneration(SymbolParams(n, d, xi), samples=samples or 1000, seed=seed)
            for n in (ns or (3, 4))]


def _symmetry(xi, d, ns, samples, seed):
    return [checks.check_symmetry(SymbolParams(n, d, xi), samples=samples or 1000, seed=seed)
            for n in (ns or (2, 3, 4))]


def _lemma(name):
    def run(xi, d, ns, samples, seed):
        out = []
        for n in (ns or (checks.LEMMA_DEFAULT_N[name],)):
            p = SymbolParams(n, d, xi)
            out.append(checks.check_cross_lemma(name, p, samples=samples or 10000, seed=seed))
        return out
    return run


def _lemmas(xi, d, ns, samples, seed):
    return [r for name in checks.LEMMAS for r in _lemma(name)(xi, d, ns, samples, seed)]


def _structure(xi, d, ns, samples, seed):
    out = []
    for label, n, pt in STRUCTURE_POINTS:
        p = SymbolParams(n, d, xi)
        out.append(checks.check_structure(np.array(pt), p, samples=samples or 2000, seed=seed))
    return out


def _weight(xi, d, ns, samples, seed):
    p = SymbolParams(3, 2, xi)
    return [checks.check_weight([np.eye(4)], xi, samples=samples or 40, seed=seed, label="origin4"),
            checks.check_weight(checks.degeneration_constraints(p), xi, samples=samples or 40,
                                seed=seed, label="dgn3")]


def _bai(xi, d, ns, samples, seed):
    return [quadrature.check_bai(1, d, xi, seed=seed), quadrature.check_bai(2, d, xi, seed=seed)]


def _prc(xi, d, ns, samples, seed):
    return [quadrature.check_prc(2, d, xi, seed=seed)]


def _envelope(xi, d, ns, samples, seed):
    return [checks.check_envelope(SymbolParams(2, d, xi), paths=samples or 5000, seed=seed)]


SUITES = {
    "degeneration": _degeneration,
    "symmetry": _symmetry,
    **{name: _lemma(name) for name in checks.LEMMAS},
    "lemmas": _lemmas,
    "structure": _structure,
    "weight": _weight,
    "bai": _bai,
    "prc": _prc,
    "envelope": _envelope,
}
FAST = ("degeneration", "symmetry", "lemmas", "structure", "weight", "bai", "prc")


def run_suite(name, xis=(1.0,), d=2, ns=None, samples=None, seed=checks.DEFAULT_SEED):
    """CheckReports of suite ``name`` ('all' runs FAST plus the envelope check)."""
    names = FAST + ("envelope",) if name == "all" else (name,)
    out = []
    for nm in names:
        if nm not in SUITES:
            raise KeyError(f"unknown suite {nm!r}; choose from {sorted(SUITES) + ['all']}")
        for xi in xis:
            out.extend(SUITES[nm](float(xi), d, ns, samples, seed))
    return out
