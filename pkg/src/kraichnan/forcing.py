"""Radial, compactly supported forcing profiles chi."""
from dataclasses import dataclass

import numpy as np

KINDS = ("ball", "bump")


@dataclass(frozen=True)
class ForcingSpec:
    """Unit-ball indicator or smooth bump of radius ``radius``.

    The bump is exp(1 - 1/(1 - s^2)) in s = |x|/radius, equal to 1 at 0.
    """

    kind: str = "ball"
    radius: float = 1.0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"forcing kind must be one of {KINDS}, got {self.kind!r}")
        if not self.radius > 0:
            raise ValueError("forcing radius must be positive")
        object.__setattr__(self, "radius", float(self.radius))

    @property
    def support(self):
        return self.radius

    def profile(self, s):
        """chi as a function of the radius s >= 0."""
        s = np.asarray(s, dtype=float) / self.radius
        if self.kind == "ball":
            return (s <= 1.0).astype(float)
        inside = s < 1.0
        q = np.where(inside, 1.0 - s * s, 1.0)
        return np.where(inside, np.exp(1.0 - 1.0 / q), 0.0)

    def __call__(self, x):
        """chi evaluated on vectors, shape (..., d) -> (...)."""
        x = np.asarray(x, dtype=float)
        return self.profile(np.sqrt(np.sum(x * x, axis=-1)))
