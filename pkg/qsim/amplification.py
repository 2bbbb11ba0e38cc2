import logging
import math
from dataclasses import dataclass

import numpy as np

from qsim.ledger import QueryLedger
from qsim.oracles import TailOracle
from qsim.statevector import StateVector, marked_probability, phase_flag, phase_zero, zero_state
from risk_model.errors import GuardExceededError, ValidationError

logger = logging.getLogger(__name__)

MAX_SCHEDULE_LENGTH = 100_001
VALIDATION_POINTS = 50
# slack on the success floor when the schedule is checked numerically
FLOOR_TOLERANCE = 1e-12


@dataclass(frozen=True)
class FPAASchedule:
    """
    Odd length L = 2l + 1 (calls to U and U^dagger) with phase pairs (alpha_j, beta_j),
    beta_{l-j+1} = -alpha_j. Success probability stays >= 1 - delta^2 for every p >= w.
    """

    length: int
    phases: tuple
    delta: float
    w: float
    gamma: float

    @property
    def target_floor(self) -> float:
        return 1.0 - self.delta ** 2

    @property
    def iterations(self) -> int:
        return (self.length - 1) // 2

    @classmethod
    def single_call(cls, delta: float, w: float) -> "FPAASchedule":
        return cls(length=1, phases=(), delta=delta, w=w, gamma=0.0)

    def to_dict(self) -> dict:
        return {
            "length": self.length,
            "delta": self.delta,
            "target_floor": self.target_floor,
            "w": self.w,
            "gamma": self.gamma,
            "alphas": [a for a, _ in self.phases],
            "betas": [b for _, b in self.phases],
        }


def chebyshev_length(delta: float, w: float) -> float:
    """Real-valued L at which T_{1/L}(1/delta) sqrt(1 - w) = 1."""
    if w >= 1.0:
        return 1.0
    return math.acosh(1.0 / delta) / math.acosh(1.0 / math.sqrt(1.0 - w))


def asymptotic_length(delta: float, w: float) -> float:
    """log(2/delta)/sqrt(w), the bound the exact length approaches for small w."""
    return math.log(2.0 / delta) / math.sqrt(w)


def _odd_ceil(x: float) -> int:
    length = max(1, math.ceil(x - 1e-9))
    return length if length % 2 else length + 1


def schedule_phases(length: int, delta: float) -> tuple:
    l = (length - 1) // 2
    gamma = 1.0 / math.cosh(math.acosh(1.0 / delta) / length)
    sg = math.sqrt(max(0.0, 1.0 - gamma ** 2))
    j = np.arange(1, l + 1)
    alphas = 2.0 * np.arctan2(1.0, np.tan(2.0 * np.pi * j / length) * sg)
    betas = -alphas[::-1]
    return gamma, tuple((float(a), float(b)) for a, b in zip(alphas, betas))


def two_branch_success(schedule: FPAASchedule, p: float) -> float:
    """
    Flag-1 probability after the schedule on the two-dimensional span of the
    marked and unmarked branches of A|0> = sqrt(p)|t> + sqrt(1-p)|n>.
    """
    s = np.array([math.sqrt(p), math.sqrt(1.0 - p)], dtype=complex)
    psi = s.copy()
    projector_s = np.outer(s, s.conj())
    for alpha, beta in schedule.phases:
        psi[0] *= np.exp(1j * beta)
        psi = psi - (1.0 - np.exp(-1j * alpha)) * (projector_s @ psi)
        psi = -psi
    return float(abs(psi[0]) ** 2)


def naive_grover_success(p: float, iterations: int) -> float:
    """sin^2((2k+1) theta) with sin^2 theta = p: the over-rotating control."""
    theta = math.asin(math.sqrt(p))
    return math.sin((2 * iterations + 1) * theta) ** 2


def minimum_success(schedule: FPAASchedule, points: int = VALIDATION_POINTS, upper: float = 1.0) -> float:
    sweep = np.linspace(schedule.w, upper, points, endpoint=False)
    return min(two_branch_success(schedule, float(p)) for p in sweep)


def compute_phase_schedule(delta: float, w: float, max_length: int = MAX_SCHEDULE_LENGTH) -> FPAASchedule:
    """Shortest odd-length schedule whose floor 1 - delta^2 holds for every p >= w."""
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    if not 0.0 < w < 1.0:
        raise ValidationError(f"lower bound w must lie in (0, 1), got {w}")
    length = _odd_ceil(chebyshev_length(delta, w))
    while True:
        if length > max_length:
            raise GuardExceededError(
                f"fixed-point schedule needs L={length} > {max_length} calls (delta={delta}, w={w})"
            )
        if length == 1:
            schedule = FPAASchedule.single_call(delta, w)
        else:
            gamma, phases = schedule_phases(length, delta)
            schedule = FPAASchedule(length=length, phases=phases, delta=delta, w=w, gamma=gamma)
        # the closed form is checked against direct simulation, not trusted
        if length == 1 or minimum_success(schedule) >= schedule.target_floor - FLOOR_TOLERANCE:
            break
        logger.warning(f"schedule L={length} misses its floor numerically; trying L={length + 2}")
        length += 2
    logger.info(
        f"fixed-point schedule: L={schedule.length} for delta={delta:.4g}, w={w:.4g} "
        f"(asymptotic bound {asymptotic_length(delta, w):.1f})"
    )
    return schedule


@dataclass(frozen=True)
class EpsPrimeBudget:
    """cap = min(eps / (2 C_max), (sigma_max / E_max)^2) bounds the flag-0 mass of U_P."""

    eps: float
    c_max: float
    e_max: float
    sigma_max: float
    n_gr: int = 1

    def __post_init__(self):
        for name in ("eps", "c_max", "e_max", "sigma_max"):
            value = getattr(self, name)
            if not (value > 0.0 and math.isfinite(value)):
                raise ValidationError(f"{name} must be positive and finite, got {value}")
        if self.sigma_max > self.e_max:
            raise ValidationError(f"sigma_max={self.sigma_max} exceeds E_max={self.e_max}")
        if self.eps > self.sigma_max * math.sqrt(self.n_gr):
            raise ValidationError(
                f"eps={self.eps} exceeds sigma_max*sqrt(N_gr) "
                f"(ratio {self.eps / (self.sigma_max * math.sqrt(self.n_gr)):.4g})"
            )

    @property
    def cap(self) -> float:
        return min(self.eps / (2.0 * self.c_max), (self.sigma_max / self.e_max) ** 2)

    @property
    def amplitude_delta(self) -> float:
        """delta on amplitude; the probability floor is 1 - cap."""
        return math.sqrt(self.cap)


def reference_query_count(p: float, budget: EpsPrimeBudget) -> float:
    """log(max(C_max/eps, E_max/sigma_max)) / sqrt(p), constant 1."""
    return math.log(max(budget.c_max / budget.eps, budget.e_max / budget.sigma_max)) / math.sqrt(p)


@dataclass(eq=False)
class AmplifiedOracle:
    """U_P: U>=v followed by the phased iterates -S_s(alpha_j) S_t(beta_j)."""

    oracle: TailOracle
    schedule: FPAASchedule
    budget: EpsPrimeBudget

    def apply(self, state: StateVector, ledger: QueryLedger) -> StateVector:
        oracle = self.oracle
        oracle.apply(state, ledger)
        for alpha, beta in self.schedule.phases:
            phase_flag(state, beta, flag=1)
            oracle.apply_inverse(state, ledger)
            phase_zero(state, -alpha)
            oracle.apply(state, ledger)
            state.amplitudes *= -1.0
        ledger.charge(up_calls=1)
        return state

    def prepare(self, ledger: QueryLedger) -> StateVector:
        return self.apply(zero_state(self.oracle.basis), ledger)

    def call_cost(self) -> QueryLedger:
        cost = QueryLedger()
        cost.absorb(self.oracle.call_cost(), times=self.schedule.length)
        cost.charge(up_calls=1)
        return cost


def build_u_p(
    u_gev: TailOracle,
    p_bound: float,
    budget: EpsPrimeBudget,
    max_length: int = MAX_SCHEDULE_LENGTH,
) -> AmplifiedOracle:
    """Amplify the flag-1 branch until its complement is below budget.cap for every p >= p_bound."""
    if not 0.0 < p_bound <= 1.0:
        raise ValidationError(f"tail probability bound must lie in (0, 1], got {p_bound}")
    cap = budget.cap
    if cap >= 1.0:
        raise ValidationError(f"epsilon' cap {cap} >= 1 leaves nothing to amplify against")
    delta = budget.amplitude_delta
    if p_bound >= 1.0 - cap:
        schedule = FPAASchedule.single_call(delta, p_bound)
    else:
        schedule = compute_phase_schedule(delta, p_bound, max_length=max_length)
    logger.info(
        f"U_P: cap={cap:.4g}, L={schedule.length} calls to U>=v "
        f"(reference count {reference_query_count(p_bound, budget):.2f})"
    )
    return AmplifiedOracle(oracle=u_gev, schedule=schedule, budget=budget)


def flag_zero_mass(state: StateVector) -> float:
    """epsilon', the mass left on the unmarked branch."""
    return marked_probability(state, flag=0)
