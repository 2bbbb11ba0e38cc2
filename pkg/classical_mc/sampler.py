import logging
import math
from dataclasses import dataclass

import numpy as np

from qsim.ledger import QueryLedger
from risk_model.discretization import DiscreteSN
from risk_model.errors import ValidationError
from risk_model.merton import Portfolio, default_prob_matrix, std_normal_ppf_array

logger = logging.getLogger(__name__)

FACTOR_MODES = ("normal", "inverse-cdf", "discrete")
DEFAULT_BATCH = 65_536
# per obligor and scenario: one conditional-default CDF chain, one multiply-add into the loss
ARITHMETIC_PER_OBLIGOR = 2


@dataclass(frozen=True)
class McConfig:
    """
    factor_mode selects how X_0 is drawn:
      normal       exact sampler of the generator (pure classical baseline)
      inverse-cdf  uniform pushed through the erf-based inverse CDF
      discrete     draws from a DiscreteSN grid, matching the simulated oracle's law
    """

    seed: int
    samples_requested: int
    batch: int = DEFAULT_BATCH
    target_accuracy: float = 0.01
    confidence: float = 0.95
    factor_mode: str = "normal"
    disc: DiscreteSN | None = None
    workers: int = 1

    def __post_init__(self):
        if int(self.samples_requested) != self.samples_requested or self.samples_requested < 1:
            raise ValidationError(f"sample count must be a positive integer, got {self.samples_requested}")
        if self.batch < 1:
            raise ValidationError(f"batch size must be positive, got {self.batch}")
        if not self.target_accuracy > 0.0:
            raise ValidationError(f"target accuracy must be positive, got {self.target_accuracy}")
        if not 0.0 < self.confidence < 1.0:
            raise ValidationError(f"confidence must lie in (0, 1), got {self.confidence}")
        if self.factor_mode not in FACTOR_MODES:
            raise ValidationError(f"factor_mode must be one of {FACTOR_MODES}, got {self.factor_mode!r}")
        if self.factor_mode == "discrete" and self.disc is None:
            raise ValidationError("factor_mode 'discrete' needs a DiscreteSN grid")
        if self.workers < 1:
            raise ValidationError(f"workers must be positive, got {self.workers}")
        if not 0 <= self.seed < 2 ** 64:
            raise ValidationError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def delta(self) -> float:
        return 1.0 - self.confidence

    def batch_sizes(self) -> list:
        full, rest = divmod(int(self.samples_requested), self.batch)
        return [self.batch] * full + ([rest] if rest else [])


def batch_generator(seed: int, batch_index: int) -> np.random.Generator:
    """Counter-based Philox stream for one batch; independent of how batches are scheduled."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, batch_index])))


def draw_factor(rng: np.random.Generator, size: int, mode: str = "normal", disc: DiscreteSN | None = None):
    if mode == "normal":
        return rng.standard_normal(size)
    if mode == "inverse-cdf":
        return std_normal_ppf_array(rng.random(size))
    if mode == "discrete":
        if disc is None:
            raise ValidationError("discrete factor draws need a DiscreteSN grid")
        return disc.points[rng.choice(disc.count, size=size, p=disc.probs)]
    raise ValidationError(f"unknown factor mode {mode!r}")


def sample_scenarios(
    portfolio: Portfolio,
    rng: np.random.Generator,
    size: int,
    mode: str = "normal",
    disc: DiscreteSN | None = None,
    ledger: QueryLedger | None = None,
) -> tuple:
    """`size` draws of (x0, y); y is a (size, N_obl) 0/1 matrix."""
    x0 = draw_factor(rng, size, mode, disc)
    pdef = default_prob_matrix(portfolio, x0)
    defaults = (rng.random(pdef.shape) < pdef).astype(np.int8)
    if ledger is not None:
        n_obl = portfolio.n_obligors
        ledger.charge(
            classical_samples=size,
            normal_draws=size,
            bernoulli_draws=size * n_obl,
            arithmetic_calls=size * ARITHMETIC_PER_OBLIGOR * n_obl,
        )
    return x0, defaults


def sample_scenario(
    portfolio: Portfolio,
    rng: np.random.Generator,
    mode: str = "normal",
    disc: DiscreteSN | None = None,
    ledger: QueryLedger | None = None,
) -> tuple:
    x0, defaults = sample_scenarios(portfolio, rng, 1, mode, disc, ledger)
    return float(x0[0]), defaults[0]


@dataclass(frozen=True)
class TailMoments:
    """Count, mean and centred second moment of the tail samples (columns: L, L_1 .. L_Ngr)."""

    count: int
    mean: np.ndarray
    m2: np.ndarray

    @classmethod
    def empty(cls, width: int) -> "TailMoments":
        return cls(count=0, mean=np.zeros(width), m2=np.zeros(width))

    @classmethod
    def from_samples(cls, values: np.ndarray) -> "TailMoments":
        """values: (n, width)"""
        if len(values) == 0:
            return cls.empty(values.shape[1])
        mean = values.mean(axis=0)
        return cls(count=len(values), mean=mean, m2=((values - mean) ** 2).sum(axis=0))

    def merge(self, other: "TailMoments") -> "TailMoments":
        if other.count == 0:
            return self
        if self.count == 0:
            return other
        count = self.count + other.count
        delta = other.mean - self.mean
        mean = self.mean + delta * (other.count / count)
        m2 = self.m2 + other.m2 + delta ** 2 * (self.count * other.count / count)
        return TailMoments(count=count, mean=mean, m2=m2)

    def standard_errors(self) -> np.ndarray:
        if self.count < 2:
            return np.full(self.mean.shape, math.inf)
        return np.sqrt(self.m2 / (self.count - 1) / self.count)


def pairwise_merge(parts: list) -> TailMoments:
    """Tree reduction in a fixed order so the result does not depend on worker scheduling."""
    if not parts:
        raise ValidationError("nothing to merge")
    while len(parts) > 1:
        merged = [parts[i].merge(parts[i + 1]) for i in range(0, len(parts) - 1, 2)]
        if len(parts) % 2:
            merged.append(parts[-1])
        parts = merged
    return parts[0]
