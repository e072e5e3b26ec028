"""Generalized-moment statistics of a discretely observed path."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ValidationError
from .fou import ObservationSeries


@dataclass(frozen=True)
class MomentVector:
    """Lag-0, lag-h and lag-2h second moments (sample or population)."""

    eta0: float
    eta1: float
    eta2: float

    def __post_init__(self):
        vals = (self.eta0, self.eta1, self.eta2)
        if not all(math.isfinite(v) for v in vals):
            raise ValidationError(f"moments must be finite, got {vals}")
        if self.eta0 < 0:
            raise ValidationError(f"eta0 is a mean square and cannot be negative, got {self.eta0}")

    def as_array(self) -> np.ndarray:
        return np.array([self.eta0, self.eta1, self.eta2])

    @classmethod
    def from_array(cls, v) -> "MomentVector":
        return cls(float(v[0]), float(v[1]), float(v[2]))


def required_length(n: int) -> int:
    """Observations X_0 .. X_{(2n+2)h} are needed for ``n`` summands."""
    return 2 * n + 3


def compute_moments(series: ObservationSeries | np.ndarray, n: int) -> MomentVector:
    """
    eta0 = (1/n) sum_{k=1}^n X_k^2
    eta1 = (1/n) sum_{k=1}^n X_k X_{k+1}
    eta2 = (1/n) sum_{k=1}^n X_{2k} X_{2k+2}

    with X_k the observation at time kh; X_0 is never used.  Products are
    accumulated with ``math.fsum`` (exactly rounded sum).
    """
    x = series.values if isinstance(series, ObservationSeries) else np.asarray(series, dtype=float)
    if int(n) != n or n < 1:
        raise ValidationError(f"n must be a positive integer, got {n!r}")
    need = required_length(n)
    if x.size < need:
        raise ValidationError(
            f"series too short: n={n} summands need 2n+3 = {need} observations, got {x.size}"
        )
    k = np.arange(1, n + 1)
    eta0 = math.fsum(x[k] * x[k]) / n
    eta1 = math.fsum(x[k] * x[k + 1]) / n
    eta2 = math.fsum(x[2 * k] * x[2 * k + 2]) / n
    return MomentVector(eta0, eta1, eta2)
