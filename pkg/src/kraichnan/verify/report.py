"""Check reports and log-log regression."""
from dataclasses import dataclass, field, asdict

import numpy as np


class FitError(ValueError):
    pass


@dataclass
class CheckReport:
    name: str
    samples: int
    max_ratio: float
    calibrated_constant: float
    seed: int
    subchecks: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    @property
    def own_pass(self):
        return bool(np.isfinite(self.max_ratio) and self.max_ratio <= self.calibrated_constant)

    @property
    def passed(self):
        return self.own_pass and all(s.passed for s in self.subchecks)

    def to_dict(self):
        return {
            "name": self.name,
            "samples": int(self.samples),
            "max_ratio": float(self.max_ratio),
            "calibrated_constant": float(self.calibrated_constant),
            "passed": self.passed,
            "seed": int(self.seed),
            "subchecks": [s.to_dict() for s in self.subchecks],
            "details": _jsonable(self.details),
        }

    def summary_lines(self, indent=""):
        flag = "PASS" if self.passed else "FAIL"
        lines = [f"{indent}{flag}  {self.name:<32s} max ratio {self.max_ratio:.6g}"
                 f"  <=  {self.calibrated_constant:.6g}  (samples {self.samples}, seed {self.seed})"]
        for s in self.subchecks:
            lines.extend(s.summary_lines(indent + "  "))
        return lines


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    stderr: float
    window: tuple
    r_squared: float
    points: int

    def to_dict(self):
        return asdict(self)


def _wls(X, Y, w):
    W = w / w.sum()
    xm, ym = np.sum(W * X), np.sum(W * Y)
    sxx = np.sum(W * (X - xm) ** 2)
    if sxx == 0:
        raise FitError("abscissae are all equal")
    slope = np.sum(W * (X - xm) * (Y - ym)) / sxx
    icpt = ym - slope * xm
    res = Y - (icpt + slope * X)
    ss_res = np.sum(W * res ** 2)
    ss_tot = np.sum(W * (Y - ym) ** 2)
    r2 = 1.0 if ss_tot <= 1e-30 * max(1.0, ym * ym) else 1.0 - ss_res / ss_tot
    n = X.size
    # covariance scaled by the weighted residual variance (polyfit convention)
    s2 = ss_res * n / (n - 2) if n > 2 else 0.0
    se = float(np.sqrt(s2 / (n * sxx))) if n > 2 else float("nan")
    return float(slope), float(icpt), se, float(r2)


def fit_linear(x, y, sigma=None):
    """Weighted least-squares line y = a + b x."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.size < 3:
        raise FitError("need at least three (x, y) pairs of equal length")
    w = np.ones_like(x) if sigma is None else 1.0 / np.asarray(sigma, dtype=float) ** 2
    slope, icpt, se, r2 = _wls(x, y, w)
    return FitResult(slope, icpt, se, (float(x.min()), float(x.max())), r2, int(x.size))


def fit_exponent(x, y, stderr=None, min_points=4):
    """Power-law fit y ~ c x^slope by weighted least squares on log-log data.

    Weights are 1/sigma_log^2 with sigma_log = stderr / y when stderr is
    given (zero or missing errors fall back to equal weights).
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1:
        raise FitError("x and y must be one-dimensional and of equal length")
    if x.size < min_points:
        raise FitError(f"need at least {min_points} points, got {x.size}")
    if np.any(y <= 0) or np.any(x <= 0):
        raise FitError("log-log fit needs positive abscissae and values")
    X, Y = np.log(x), np.log(y)
    if stderr is None:
        w = np.ones_like(X)
    else:
        s = np.asarray(stderr, dtype=float) / y
        w = np.ones_like(X) if np.any(s <= 0) else 1.0 / s ** 2
    slope, icpt, se, r2 = _wls(X, Y, w)
    return FitResult(slope, icpt, se, (float(x.min()), float(x.max())), r2, int(x.size))
