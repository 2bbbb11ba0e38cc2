import logging
import math
from dataclasses import dataclass, field

import numpy as np

from qsim.fixed_point import DEFAULT_FORMAT, FixedPointFormat
from qsim.ledger import QueryLedger
from qsim.statevector import (
    ANGLE_ARITHMETIC_COST,
    BasisPermutation,
    GridPreparation,
    ScenarioBasis,
    StateVector,
    apply_basis_permutation,
    apply_cry,
    zero_state,
)
from risk_model.discretization import DiscreteSN
from risk_model.errors import ValidationError, ZeroTailError
from risk_model.exact import default_patterns, scenario_law
from risk_model.merton import GroupPartition, Portfolio, default_prob_matrix

logger = logging.getLogger(__name__)

# one multiply and one add per obligor for the running loss, one comparison at the end
LOSS_ARITHMETIC_PER_OBLIGOR = 2
COMPARISON_COST = 1
# per obligor: the loss sum feeding each group payload, multiply plus add
PAYLOAD_ARITHMETIC_PER_OBLIGOR = 2


@dataclass(frozen=True, eq=False)
class TailOracleSpec:
    portfolio: Portfolio
    disc: DiscreteSN
    threshold: float
    format: FixedPointFormat = DEFAULT_FORMAT
    quantize_angles: bool = False
    # v <= 0 is only meaningful as a test configuration
    allow_nonpositive_threshold: bool = False

    def __post_init__(self):
        if not math.isfinite(self.threshold):
            raise ValidationError(f"threshold must be finite, got {self.threshold}")
        if self.threshold <= 0.0 and not self.allow_nonpositive_threshold:
            raise ValidationError(f"threshold v must be positive, got {self.threshold}")


def rotation_angles(portfolio: Portfolio, disc: DiscreteSN) -> np.ndarray:
    """(N_SN, N_obl) angles arccos(sqrt(1 - P_k(x_i))); R_Y of that angle puts P_k on |1>."""
    pdef = default_prob_matrix(portfolio, disc.points)
    return np.arccos(np.sqrt(np.clip(1.0 - pdef, 0.0, 1.0)))


def fixed_point_losses(portfolio: Portfolio, fmt: FixedPointFormat) -> np.ndarray:
    """Raw fixed-point loss of every default pattern, accumulated from rounded exposures."""
    raw_exposures = fmt.to_raw(portfolio.exposures)
    raw_losses = default_patterns(portfolio.n_obligors).astype(np.int64) @ raw_exposures
    fmt.check_range(raw_losses)
    return raw_losses


def tail_flags(portfolio: Portfolio, threshold: float, fmt: FixedPointFormat) -> np.ndarray:
    """[L(y) >= v] per pattern via the two's complement comparator."""
    return fmt.greater_equal(fixed_point_losses(portfolio, fmt), fmt.to_raw(threshold)).astype(np.int64)


def comparator_semantics(x: float, y: float, fmt: FixedPointFormat = DEFAULT_FORMAT) -> int:
    """1 iff x >= y after both are rounded onto the fixed-point grid."""
    return int(fmt.greater_equal(fmt.to_raw(x), fmt.to_raw(y)))


def flag_permutation(basis: ScenarioBasis, flags: np.ndarray) -> BasisPermutation:
    """w <- w XOR flag(y); an involution."""
    idx = np.arange(basis.dimension, dtype=np.int64)
    y = (idx >> 1) & (basis.n_patterns - 1)
    cost = LOSS_ARITHMETIC_PER_OBLIGOR * basis.obligor_count + COMPARISON_COST
    return BasisPermutation(basis, idx ^ flags[y], cost=cost, name="U_comp")


@dataclass(eq=False)
class TailOracle:
    """U>=v: grid loading, one controlled rotation per obligor, then the loss comparison into the flag."""

    spec: TailOracleSpec
    basis: ScenarioBasis
    preparation: GridPreparation
    angles: np.ndarray
    flags: np.ndarray
    comparison: BasisPermutation
    tail_probability: float

    @property
    def n_obligors(self) -> int:
        return self.basis.obligor_count

    def apply(self, state: StateVector, ledger: QueryLedger) -> StateVector:
        self.preparation.apply(state, ledger)
        for k in range(self.n_obligors):
            apply_cry(state, k, self.angles[:, k], ledger)
        apply_basis_permutation(state, self.comparison, ledger)
        ledger.charge(ugev_calls=1)
        return state

    def apply_inverse(self, state: StateVector, ledger: QueryLedger) -> StateVector:
        apply_basis_permutation(state, self.comparison, ledger)
        for k in reversed(range(self.n_obligors)):
            apply_cry(state, k, -self.angles[:, k], ledger)
        self.preparation.apply(state, ledger)
        ledger.charge(ugev_calls=1)
        return state

    def prepare(self, ledger: QueryLedger) -> StateVector:
        return self.apply(zero_state(self.basis), ledger)

    def call_cost(self) -> QueryLedger:
        """Closed form for one application: arithmetic = 4 N_obl + 1."""
        n = self.n_obligors
        return QueryLedger(
            usn_calls=1,
            cry_calls=n,
            arithmetic_calls=(ANGLE_ARITHMETIC_COST + LOSS_ARITHMETIC_PER_OBLIGOR) * n + COMPARISON_COST,
            ugev_calls=1,
        )


def build_u_gev(spec: TailOracleSpec) -> TailOracle:
    portfolio, disc = spec.portfolio, spec.disc
    basis = ScenarioBasis(grid_size=disc.count, obligor_count=portfolio.n_obligors)
    angles = rotation_angles(portfolio, disc)
    if spec.quantize_angles:
        angles = spec.format.quantize(angles)
    flags = tail_flags(portfolio, spec.threshold, spec.format)

    law = scenario_law(portfolio, disc)
    p = math.fsum(law.weights[:, flags == 1].ravel())
    if p <= 0.0:
        raise ZeroTailError(f"Pr(L >= {spec.threshold}) = 0; the tail oracle would never mark a scenario")

    oracle = TailOracle(
        spec=spec,
        basis=basis,
        preparation=GridPreparation(disc.probs),
        angles=angles,
        flags=flags,
        comparison=flag_permutation(basis, flags),
        tail_probability=min(p, 1.0),
    )
    logger.info(
        f"U>=v built: N_SN={disc.count}, N_obl={portfolio.n_obligors}, v={spec.threshold}, "
        f"dim={basis.dimension}, p={oracle.tail_probability:.6g}"
    )
    return oracle


@dataclass(frozen=True, eq=False)
class PayloadSpec:
    """xi_K(i, y, w) = w * L_K(y)."""

    portfolio: Portfolio
    partition: GroupPartition | None = None

    def __post_init__(self):
        partition = self.partition or self.portfolio.partition
        if partition.n_obligors != self.portfolio.n_obligors:
            raise ValidationError(
                f"partition covers {partition.n_obligors} obligors, portfolio has {self.portfolio.n_obligors}"
            )
        object.__setattr__(self, "partition", partition)

    @property
    def n_groups(self) -> int:
        return self.partition.n_groups

    @property
    def group_exposures(self) -> np.ndarray:
        return self.portfolio.with_partition(self.partition).group_exposures


def payload_table(spec: PayloadSpec) -> np.ndarray:
    """(N_gr, 2^N_obl, 2) payload values; the w = 0 column is zero."""
    grouped = spec.portfolio.with_partition(spec.partition)
    patterns = default_patterns(grouped.n_obligors).astype(float)
    group_losses = (grouped.partition.membership() * grouped.exposures) @ patterns.T
    table = np.zeros((spec.n_groups, len(patterns), 2))
    table[:, :, 1] = group_losses
    return table


@dataclass(eq=False)
class AnnotatedState:
    """A state with the payload register adjoined; payloads are read off the labels."""

    state: StateVector
    payload: np.ndarray = field(repr=False)

    def expectations(self) -> np.ndarray:
        probs = self.state.probabilities().sum(axis=0)
        return np.array([math.fsum((probs * xi).ravel()) for xi in self.payload])


def payload_call_cost(spec: PayloadSpec) -> QueryLedger:
    return QueryLedger(uxi_calls=1, arithmetic_calls=PAYLOAD_ARITHMETIC_PER_OBLIGOR * spec.portfolio.n_obligors)


def apply_u_xi(state: StateVector, spec: PayloadSpec, ledger: QueryLedger) -> AnnotatedState:
    if spec.portfolio.n_obligors != state.basis.obligor_count:
        raise ValidationError(
            f"payload portfolio has {spec.portfolio.n_obligors} obligors, state has {state.basis.obligor_count}"
        )
    ledger.absorb(payload_call_cost(spec))
    return AnnotatedState(state=state, payload=payload_table(spec))
