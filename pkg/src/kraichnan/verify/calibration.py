"""Frozen constants for the sampled checks, and the run that produces them.

Constants are fitted on calibration seeds, multiplied by a safety factor and
stored in ``calibration.json`` next to this module.  Checks validate against
them on different seeds.  Regenerate with::

    python -m kraichnan.verify.calibration
"""
import json
import os
import sys

DATA_FILE = os.path.join(os.path.dirname(__file__), "calibration.json")
CALIBRATION_SEED = 1
SAFETY = 2.0
XIS = (0.5, 1.0, 1.5)

_cache = None


class CalibrationError(KeyError):
    pass


def key(kind, params, **extra):
    parts = [kind, f"n={params.n}", f"d={params.d}", f"xi={params.xi:g}"]
    parts += [f"{k}={v}" for k, v in sorted(extra.items())]
    return ":".join(parts)


def load(path=DATA_FILE):
    global _cache
    if _cache is None or path != DATA_FILE:
        with open(path) as fh:
            data = json.load(fh)
        if path != DATA_FILE:
            return data
        _cache = data
    return _cache


def constant(name):
    data = load()
    try:
        return float(data["constants"][name]["constant"])
    except KeyError:
        raise CalibrationError(
            f"no frozen constant for {name!r}; run `python -m kraichnan.verify.calibration`"
        ) from None


def _entry(report, safety=SAFETY):
    return {"constant": float(report.max_ratio * safety), "observed": float(report.max_ratio),
            "samples": int(report.samples), "seed": int(report.seed), "safety": safety}


def _put(out, report, safety=SAFETY):
    out[report.name] = _entry(report, safety)
    for s in report.subchecks:
        if s.name not in out and not s.name.endswith("on-set"):
            out[s.name] = _entry(s, safety)


def run_calibration(seed=CALIBRATION_SEED, log=print):
    """Compute every constant on ``seed``; returns the JSON-ready dict."""
    import numpy as np
    from ..symbol import SymbolParams
    from . import checks

    inf = float("inf")
    out = {}
    for xi in XIS:
        for n in (2, 3, 4):
            p = SymbolParams(n, 2, xi)
            r = checks.check_degeneration(p, samples=4000, seed=seed, c=1e-300)
            _put(out, r)
        for lemma in checks.LEMMAS:
            p = SymbolParams(checks.LEMMA_DEFAULT_N[lemma], 2, xi)
            _put(out, checks.check_cross_lemma(lemma, p, samples=20000, E=inf, seed=seed))
        for pt, n in (([[0.0, 0.0], [1.0, 0.0]], 3), ([[0.0, 0.0], [1.0, 0.0], [0.0, 0.0]], 4)):
            p = SymbolParams(n, 2, xi)
            _put(out, checks.check_structure(np.array(pt), p, eps=0.1, samples=8000,
                                             lam=inf, seed=seed))
        p3 = SymbolParams(3, 2, xi)
        for label, cons in (("origin4", [np.eye(4)]),
                            ("dgn3", checks.degeneration_constraints(p3))):
            _put(out, checks.check_weight(cons, xi, samples=60, seed=seed, label=label,
                                          C=inf, doubling=inf, a2=inf))
        log(f"calibrated xi={xi:g}: {len(out)} constants")
    p = SymbolParams(2, 2, 1.0)
    _put(out, checks.check_envelope(p, seed=seed, C=inf))
    return {"format": 1, "calibration_seed": seed, "safety": SAFETY, "constants": out}


def main(argv=None):
    data = run_calibration()
    with open(DATA_FILE, "w") as fh:
        json.dump(data, fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"wrote {len(data['constants'])} constants to {DATA_FILE}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
