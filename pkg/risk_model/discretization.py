import math
from dataclasses import dataclass

import numpy as np

from risk_model.errors import ValidationError
from risk_model.merton import std_normal_cdf

DEFAULT_N_SN = 16
DEFAULT_HALFWIDTH = 4.0


@dataclass(frozen=True, eq=False)
class DiscreteSN:
    """N_SN-point grid on [-D, D] carrying the standard normal mass of each cell."""

    count: int
    halfwidth: float
    points: np.ndarray
    probs: np.ndarray

    @property
    def mean(self) -> float:
        return math.fsum(self.points * self.probs)

    @property
    def variance(self) -> float:
        return math.fsum(self.points ** 2 * self.probs) - self.mean ** 2

    def cumulative(self) -> np.ndarray:
        return np.cumsum(self.probs)


def grid_points(n_sn: int, halfwidth: float) -> np.ndarray:
    return np.array([-halfwidth + 2.0 * halfwidth * i / (n_sn - 1) for i in range(n_sn)])


def discretize_std_normal(n_sn: int = DEFAULT_N_SN, halfwidth: float = DEFAULT_HALFWIDTH) -> DiscreteSN:
    if int(n_sn) != n_sn or n_sn < 2:
        raise ValidationError(f"N_SN must be an integer >= 2, got {n_sn}")
    if not (halfwidth > 0.0 and math.isfinite(halfwidth)):
        raise ValidationError(f"halfwidth D must be positive, got {halfwidth}")
    n_sn = int(n_sn)
    points = grid_points(n_sn, halfwidth)
    edges = std_normal_cdf(0.5 * (points[:-1] + points[1:]))
    probs = np.empty(n_sn)
    probs[0] = edges[0]
    probs[1:-1] = np.diff(edges)
    # last cell is the complement so the weights sum to one by construction
    probs[-1] = 1.0 - math.fsum(probs[:-1])
    if probs.min() < 0.0:
        raise ValidationError(f"negative cell probability for N_SN={n_sn}, D={halfwidth}")
    points.setflags(write=False)
    probs.setflags(write=False)
    return DiscreteSN(count=n_sn, halfwidth=float(halfwidth), points=points, probs=probs)
