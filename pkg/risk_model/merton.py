import logging
import math
from dataclasses import dataclass

import numpy as np

from risk_model.errors import ValidationError

logger = logging.getLogger(__name__)

# erf(x) ~ 1 - 1/(1 + a1 x + ... + a6 x^6)^16 for x >= 0, |error| <= 3e-7 (Abramowitz & Stegun 7.1.28)
ERF_COEFFICIENTS = (
    0.0705230784,
    0.0422820123,
    0.0092705272,
    0.0001520143,
    0.0002765672,
    0.0000430638,
)

LOADING_MARGIN = 1e-9
# pd = 0 and pd = 1 map onto these thresholds; the CDF is exactly 0 / 1 there.
THRESHOLD_BRACKET = 40.0
PPF_TOLERANCE = 1e-12


def _erf_nonnegative(u):
    poly = 0.0
    for a in reversed(ERF_COEFFICIENTS):
        poly = (poly + a) * u
    return 1.0 - (1.0 + poly) ** -16


def std_normal_cdf(x):
    """
    Standard normal CDF built on the rational erf approximation above.
    Accepts a scalar or an array; negative arguments use Phi(-x) = 1 - Phi(x).
    This is the single CDF used by the exact enumerator, the Monte Carlo
    sampler and the rotation angles of the simulated oracle.
    """
    arr = np.asarray(x, dtype=float)
    half = 0.5 * _erf_nonnegative(np.abs(arr) / math.sqrt(2.0))
    cdf = np.clip(np.where(arr >= 0.0, 0.5 + half, 0.5 - half), 0.0, 1.0)
    if cdf.ndim == 0:
        return float(cdf)
    return cdf


def std_normal_ppf(q: float, tol: float = PPF_TOLERANCE) -> float:
    """Inverse of std_normal_cdf by bisection on [-40, 40]."""
    if not 0.0 <= q <= 1.0:
        raise ValidationError(f"probability must lie in [0, 1], got {q}")
    lo, hi = -THRESHOLD_BRACKET, THRESHOLD_BRACKET
    if q <= 0.0:
        return lo
    if q >= 1.0:
        return hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if std_normal_cdf(mid) < q:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def std_normal_ppf_array(q: np.ndarray, tol: float = PPF_TOLERANCE) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    lo = np.full(q.shape, -THRESHOLD_BRACKET)
    hi = np.full(q.shape, THRESHOLD_BRACKET)
    steps = int(math.ceil(math.log2(2 * THRESHOLD_BRACKET / tol)))
    for _ in range(steps):
        mid = 0.5 * (lo + hi)
        below = std_normal_cdf(mid) < q
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


@dataclass(frozen=True)
class Obligor:
    exposure: float
    loading: float
    threshold: float

    def __post_init__(self):
        if not (self.exposure > 0.0 and math.isfinite(self.exposure)):
            raise ValidationError(f"exposure must be positive and finite, got {self.exposure}")
        if not LOADING_MARGIN <= self.loading <= 1.0 - LOADING_MARGIN:
            raise ValidationError(
                f"loading must lie in [{LOADING_MARGIN}, {1.0 - LOADING_MARGIN}], got {self.loading}"
            )
        if not math.isfinite(self.threshold):
            raise ValidationError(f"threshold must be finite, got {self.threshold}")

    @classmethod
    def from_pd(cls, exposure: float, pd: float, loading: float) -> "Obligor":
        return cls(exposure=exposure, loading=loading, threshold=std_normal_ppf(pd))


@dataclass(frozen=True)
class GroupPartition:
    sizes: tuple

    def __post_init__(self):
        sizes = tuple(int(n) for n in self.sizes)
        if not sizes or any(n < 1 for n in sizes):
            raise ValidationError(f"group sizes must be positive integers, got {self.sizes}")
        object.__setattr__(self, "sizes", sizes)

    @classmethod
    def singletons(cls, n_obligors: int) -> "GroupPartition":
        return cls(sizes=(1,) * n_obligors)

    @property
    def n_groups(self) -> int:
        return len(self.sizes)

    @property
    def n_obligors(self) -> int:
        return sum(self.sizes)

    @property
    def offsets(self) -> tuple:
        # first obligor index of each group; group K owns offsets[K] .. offsets[K] + sizes[K] - 1
        starts = [0]
        for n in self.sizes[:-1]:
            starts.append(starts[-1] + n)
        return tuple(starts)

    def group_range(self, k: int) -> range:
        if not 0 <= k < self.n_groups:
            raise ValidationError(f"group index {k} outside [0, {self.n_groups})")
        start = self.offsets[k]
        return range(start, start + self.sizes[k])

    def membership(self) -> np.ndarray:
        """(N_gr, N_obl) 0/1 matrix; row K selects the obligors of group K."""
        matrix = np.zeros((self.n_groups, self.n_obligors))
        for k in range(self.n_groups):
            r = self.group_range(k)
            matrix[k, r.start:r.stop] = 1.0
        return matrix


@dataclass(frozen=True)
class Portfolio:
    obligors: tuple
    partition: GroupPartition

    def __post_init__(self):
        obligors = tuple(self.obligors)
        if not obligors:
            raise ValidationError("a portfolio needs at least one obligor")
        if self.partition.n_obligors != len(obligors):
            raise ValidationError(
                f"group sizes sum to {self.partition.n_obligors} but the portfolio has {len(obligors)} obligors"
            )
        object.__setattr__(self, "obligors", obligors)

    @property
    def n_obligors(self) -> int:
        return len(self.obligors)

    @property
    def n_groups(self) -> int:
        return self.partition.n_groups

    @property
    def exposures(self) -> np.ndarray:
        return np.array([o.exposure for o in self.obligors])

    @property
    def loadings(self) -> np.ndarray:
        return np.array([o.loading for o in self.obligors])

    @property
    def thresholds(self) -> np.ndarray:
        return np.array([o.threshold for o in self.obligors])

    @property
    def group_exposures(self) -> np.ndarray:
        # E_K, the largest loss group K can produce
        exposures = self.exposures
        return np.array([math.fsum(exposures[self.partition.group_range(k)]) for k in range(self.n_groups)])

    @property
    def e_max(self) -> float:
        return float(self.group_exposures.max())

    def with_partition(self, partition: GroupPartition) -> "Portfolio":
        return Portfolio(obligors=self.obligors, partition=partition)


def conditional_default_prob(obligor: Obligor, x0):
    """P(Y_k = 1 | X_0 = x0) = Phi((z_k - a_k x0) / sqrt(1 - a_k^2)); x0 may be an array."""
    scale = math.sqrt(1.0 - obligor.loading ** 2)
    return std_normal_cdf((obligor.threshold - obligor.loading * np.asarray(x0, dtype=float)) / scale)


def default_prob_matrix(portfolio: Portfolio, x0: np.ndarray) -> np.ndarray:
    """(len(x0), N_obl) matrix of conditional default probabilities."""
    x0 = np.asarray(x0, dtype=float).reshape(-1, 1)
    scale = np.sqrt(1.0 - portfolio.loadings ** 2)
    return std_normal_cdf((portfolio.thresholds - portfolio.loadings * x0) / scale)


def _check_defaults(portfolio: Portfolio, y) -> np.ndarray:
    y = np.asarray(y)
    if y.shape[-1] != portfolio.n_obligors:
        raise ValidationError(f"default vector has length {y.shape[-1]}, expected {portfolio.n_obligors}")
    return y


def portfolio_loss(portfolio: Portfolio, y) -> float:
    y = _check_defaults(portfolio, y)
    return math.fsum(e for e, bit in zip(portfolio.exposures, y) if bit)


def group_loss(portfolio: Portfolio, y, k: int) -> float:
    """Loss of group k (0-based) under default vector y."""
    y = _check_defaults(portfolio, y)
    exposures = portfolio.exposures
    return math.fsum(exposures[i] for i in portfolio.partition.group_range(k) if y[i])


def loss_table(portfolio: Portfolio, defaults: np.ndarray) -> tuple:
    """
    Vectorised losses for a (M, N_obl) 0/1 matrix.
    Returns (total losses (M,), group losses (N_gr, M)).
    """
    defaults = _check_defaults(portfolio, defaults).astype(float)
    groups = portfolio.partition.membership() * portfolio.exposures
    group_losses = groups @ defaults.T
    return defaults @ portfolio.exposures, group_losses
