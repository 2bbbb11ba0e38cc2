import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
from scipy.optimize import minimize_scalar
from scipy.stats import norm

from complexity.budgets import CEIL_TOLERANCE, tolerant_ceil
from qsim.amplification import AmplifiedOracle, flag_zero_mass
from qsim.ledger import QueryLedger
from qsim.oracles import PayloadSpec, apply_u_xi, payload_call_cost
from qsim.statevector import StateVector
from risk_model.errors import ValidationError

logger = logging.getLogger(__name__)

MODES = ("exact", "surrogate", "per-group-ae")
PERTURBATIONS = ("uniform", "gaussian")
DEFAULT_SHOTS = 100
MAX_SCHEDULE_DOUBLINGS = 6
# probabilities are kept this far away from 0 and 1 inside the log-likelihood
LIKELIHOOD_FLOOR = 1e-15


def _polylog_n_log2n_log2d(n: int, n_gr: int, delta: float) -> int:
    return n * max(1, math.ceil(math.log2(n))) * max(1, math.ceil(math.log2(n_gr / delta)))


POLYLOG_CONVENTIONS = {
    "n-log2n-log2d": _polylog_n_log2n_log2d,
    "linear": lambda n, n_gr, delta: n,
}
DEFAULT_POLYLOG_CONVENTION = "n-log2n-log2d"


def polylog_calls(n: int, n_gr: int, delta: float, convention: str = DEFAULT_POLYLOG_CONVENTION) -> int:
    """How many U_P and U_xi calls the multi-mean estimator is charged for parameter n."""
    try:
        return POLYLOG_CONVENTIONS[convention](n, n_gr, delta)
    except KeyError:
        raise ValidationError(f"unknown polylog convention {convention!r}; use one of {list(POLYLOG_CONVENTIONS)}")


def check_n(n: int, n_gr: int, delta: float):
    """The estimator needs n >= log(N_gr/delta)."""
    log_term = math.log(n_gr / delta)
    if n < log_term - CEIL_TOLERANCE:
        raise ValidationError(f"n={n} is below log(N_gr/delta)={log_term:.4g}")


def derive_n(sigma_max: float, n_gr: int, delta: float, eps: float, strict: bool = True) -> int:
    """
    n = ceil(2 sqrt(2) sigma_max sqrt(N_gr) log(N_gr/delta) / eps), natural log.
    strict=False evaluates the bare formula without the eps <= sigma_max sqrt(N_gr) hypothesis.
    """
    if not (sigma_max > 0 and eps > 0 and n_gr >= 1):
        raise ValidationError(f"need sigma_max > 0, eps > 0 and N_gr >= 1, got {sigma_max}, {eps}, {n_gr}")
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    ratio = eps / (sigma_max * math.sqrt(n_gr))
    if strict and ratio > 1.0 + 1e-12:
        raise ValidationError(f"eps must not exceed sigma_max*sqrt(N_gr); eps/(sigma_max*sqrt(N_gr)) = {ratio:.4g}")
    n = tolerant_ceil(2.0 * math.sqrt(2.0) * sigma_max * math.sqrt(n_gr) * math.log(n_gr / delta) / eps)
    check_n(n, n_gr, delta)
    return n


@dataclass(frozen=True)
class EstimatorConfig:
    mode: str
    eps: float
    delta: float
    sigma_max: float
    n_gr: int
    n: int | None = None
    polylog: str = DEFAULT_POLYLOG_CONVENTION
    perturbation: str = "uniform"
    shots: int = DEFAULT_SHOTS

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"estimator mode must be one of {MODES}, got {self.mode!r}")
        if self.perturbation not in PERTURBATIONS:
            raise ValidationError(f"perturbation must be one of {PERTURBATIONS}, got {self.perturbation!r}")
        if self.polylog not in POLYLOG_CONVENTIONS:
            raise ValidationError(f"unknown polylog convention {self.polylog!r}")
        if self.shots < 1:
            raise ValidationError(f"shots must be positive, got {self.shots}")
        n = self.n if self.n is not None else derive_n(self.sigma_max, self.n_gr, self.delta, self.eps)
        check_n(n, self.n_gr, self.delta)
        object.__setattr__(self, "n", int(n))


@dataclass(frozen=True)
class ContributionEstimate:
    """values are the raw estimates of E[xi_K]; corrected divides out the (1 - eps') bias."""

    values: tuple
    corrected: tuple
    error_budget: float
    mode: str
    ledger: QueryLedger
    eps_prime: float
    n: int | None = None
    intervals: tuple = field(default=())

    def to_frame(self) -> pd.DataFrame:
        frame = pd.DataFrame(
            {
                "group": range(1, len(self.values) + 1),
                "estimate": self.values,
                "corrected": self.corrected,
                "mode": self.mode,
            }
        )
        if self.intervals:
            frame["interval_low"] = [lo for lo, _ in self.intervals]
            frame["interval_high"] = [hi for _, hi in self.intervals]
        for name, value in self.ledger.to_dict().items():
            frame[name] = value
        return frame


def estimate_exact(
    state: StateVector,
    payload_spec: PayloadSpec,
    eps: float | None = None,
    ledger: QueryLedger | None = None,
) -> ContributionEstimate:
    """E[xi_K] straight from the amplitudes."""
    ledger = ledger if ledger is not None else QueryLedger()
    annotated = apply_u_xi(state, payload_spec, ledger)
    raw = annotated.expectations()
    eps_prime = flag_zero_mass(state)
    return ContributionEstimate(
        values=tuple(float(x) for x in raw),
        corrected=tuple(float(x) for x in raw / (1.0 - eps_prime)),
        error_budget=eps,
        mode="exact",
        ledger=ledger,
        eps_prime=eps_prime,
    )


def surrogate_bound(sigma_tilde, n: int, delta: float) -> float:
    """B = sqrt(Tr Sigma~) log(N_gr/delta) / n."""
    sigma_tilde = np.asarray(sigma_tilde, dtype=float)
    return math.sqrt(math.fsum(sigma_tilde ** 2)) * math.log(len(sigma_tilde) / delta) / n


def _perturbation(rng: np.random.Generator, bound: float, size: int, kind: str) -> np.ndarray:
    if kind == "uniform":
        return rng.uniform(-bound, bound, size)
    draws = rng.normal(0.0, bound / 2.0, size)
    outside = np.abs(draws) > bound
    while outside.any():
        draws[outside] = rng.normal(0.0, bound / 2.0, int(outside.sum()))
        outside = np.abs(draws) > bound
    return draws


def estimate_surrogate(
    exact_means,
    sigma_tilde,
    n: int,
    delta: float,
    rng: np.random.Generator,
    eps: float | None = None,
    eps_prime: float = 0.0,
    sigma_max: float | None = None,
    perturbation: str = "uniform",
    up_cost: QueryLedger | None = None,
    uxi_cost: QueryLedger | None = None,
    polylog: str = DEFAULT_POLYLOG_CONVENTION,
    ledger: QueryLedger | None = None,
) -> ContributionEstimate:
    """
    Stand-in for the multivariate mean estimator: exact means moved by at most
    B in every coordinate, charged the estimator's call count.
    """
    means = np.asarray(exact_means, dtype=float)
    n_gr = len(means)
    if len(sigma_tilde) != n_gr:
        raise ValidationError(f"got {len(sigma_tilde)} variances for {n_gr} means")
    check_n(n, n_gr, delta)
    if perturbation not in PERTURBATIONS:
        raise ValidationError(f"perturbation must be one of {PERTURBATIONS}, got {perturbation!r}")
    trace = math.fsum(np.asarray(sigma_tilde, dtype=float) ** 2)
    if sigma_max is not None and trace > 2.0 * n_gr * sigma_max ** 2 * (1.0 + 1e-12):
        raise ValidationError(f"Tr Sigma~ = {trace:.6g} exceeds 2 N_gr sigma_max^2 = {2 * n_gr * sigma_max ** 2:.6g}")

    bound = surrogate_bound(sigma_tilde, n, delta)
    values = means + _perturbation(rng, bound, n_gr, perturbation)

    ledger = ledger if ledger is not None else QueryLedger()
    calls = polylog_calls(n, n_gr, delta, polylog)
    ledger.absorb(up_cost if up_cost is not None else QueryLedger(up_calls=1), times=calls)
    ledger.absorb(uxi_cost if uxi_cost is not None else QueryLedger(uxi_calls=1), times=calls)
    # u . xi inner products, kept apart from the oracle arithmetic
    ledger.charge(inner_product_calls=calls * n_gr)
    logger.info(f"surrogate: n={n}, B={bound:.4g}, {calls} estimator calls")
    return ContributionEstimate(
        values=tuple(float(x) for x in values),
        corrected=tuple(float(x) for x in values / (1.0 - eps_prime)),
        error_budget=eps,
        mode="surrogate",
        ledger=ledger,
        eps_prime=eps_prime,
        n=n,
    )


@dataclass(frozen=True)
class GroupAEResult:
    group: int
    estimate: float
    raw: float
    interval: tuple
    powers: tuple
    hits: tuple
    shots: int
    oracle_calls: int
    eps_prime: float

    @property
    def max_power(self) -> int:
        return max(self.powers)


def grover_powers(max_power: int) -> list:
    """0, 1, 2, 4, ..., max_power."""
    powers = [0]
    m = 1
    while m <= max_power:
        powers.append(m)
        m *= 2
    return powers


def _required_max_power(z: float, shots: int, eps_a: float) -> int:
    return 2 ** max(0, math.ceil(math.log2(z / (2.0 * math.sqrt(shots) * eps_a))))


def _neg_log_likelihood(theta, powers: np.ndarray, hits: np.ndarray, shots: int):
    theta = np.atleast_1d(theta)[:, None]
    p = np.clip(np.sin((2 * powers + 1) * theta) ** 2, LIKELIHOOD_FLOOR, 1.0 - LIKELIHOOD_FLOOR)
    return -(hits * np.log(p) + (shots - hits) * np.log(1.0 - p)).sum(axis=1)


def max_likelihood_angle(powers, hits, shots: int) -> float:
    """Grid search over [0, pi/2] refined by a bounded scalar minimisation."""
    powers = np.asarray(powers, dtype=float)
    hits = np.asarray(hits, dtype=float)
    grid_size = max(2000, 40 * int(2 * powers.max() + 1))
    grid = np.linspace(0.0, math.pi / 2, grid_size)
    values = _neg_log_likelihood(grid, powers, hits, shots)
    best = int(np.argmin(values))
    step = grid[1] - grid[0]
    lo, hi = max(0.0, grid[best] - step), min(math.pi / 2, grid[best] + step)
    refined = minimize_scalar(
        lambda t: float(_neg_log_likelihood(t, powers, hits, shots)[0]), bounds=(lo, hi), method="bounded"
    )
    if refined.success and refined.fun <= values[best]:
        return float(refined.x)
    return float(grid[best])


def fisher_interval(theta: float, powers, shots: int, z: float) -> tuple:
    """Interval on a = sin^2(theta) from the Fisher information shots * sum 4 (2m+1)^2."""
    info = shots * sum(4.0 * (2 * m + 1) ** 2 for m in powers)
    half = z / math.sqrt(info)
    lo, hi = max(0.0, theta - half), min(math.pi / 2, theta + half)
    return math.sin(lo) ** 2, math.sin(hi) ** 2


def _degenerate(hits: list, shots: int) -> bool:
    return all(h == 0 for h in hits) or all(h == shots for h in hits)


def estimate_per_group_ae(
    amplified: AmplifiedOracle,
    payload_spec: PayloadSpec,
    k: int,
    eps: float,
    delta: float,
    rng: np.random.Generator,
    shots: int = DEFAULT_SHOTS,
    ledger: QueryLedger | None = None,
    state: StateVector | None = None,
) -> GroupAEResult:
    """
    Maximum-likelihood amplitude estimation of E[xi_K] / E_K for one group.
    The estimation qubit is rotated by arcsin(sqrt(xi_K / E_K)); its |1> probability a
    is read off the U_P state and measured through Grover powers 0, 1, 2, 4, ...
    """
    if not 0 <= k < payload_spec.n_groups:
        raise ValidationError(f"group index {k} outside [0, {payload_spec.n_groups})")
    if not eps > 0.0:
        raise ValidationError(f"eps must be positive, got {eps}")
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    ledger = ledger if ledger is not None else QueryLedger()
    if state is None:
        state = amplified.prepare(QueryLedger())
    e_k = float(payload_spec.group_exposures[k])
    raw_mean = apply_u_xi(state, payload_spec, QueryLedger()).expectations()[k]
    a = min(max(raw_mean / e_k, 0.0), 1.0)
    eps_prime = flag_zero_mass(state)
    theta_a = math.asin(math.sqrt(a))

    z = float(norm.ppf(1.0 - delta / 2.0))
    eps_a = eps * (1.0 - eps_prime) / e_k
    powers = grover_powers(_required_max_power(z, shots, eps_a))
    hits = [int(rng.binomial(shots, math.sin((2 * m + 1) * theta_a) ** 2)) for m in powers]
    doublings = 0
    while _degenerate(hits, shots) and doublings < MAX_SCHEDULE_DOUBLINGS:
        m = 2 * powers[-1] if powers[-1] else 1
        powers.append(m)
        hits.append(int(rng.binomial(shots, math.sin((2 * m + 1) * theta_a) ** 2)))
        doublings += 1
    if doublings:
        logger.warning(f"group {k + 1}: identical outcomes on every power; schedule widened to M={powers[-1]}")

    theta_hat = max_likelihood_angle(powers, hits, shots)
    a_lo, a_hi = fisher_interval(theta_hat, powers, shots, z)
    scale = e_k / (1.0 - eps_prime)
    raw = e_k * math.sin(theta_hat) ** 2

    calls = shots * sum(2 * m + 1 for m in powers)
    ledger.absorb(amplified.call_cost(), times=calls)
    ledger.absorb(payload_call_cost(payload_spec), times=calls)
    # the estimation-qubit rotation
    ledger.charge(cry_calls=calls)
    logger.debug(f"group {k + 1}: M={powers[-1]}, {calls} oracle calls, a~{math.sin(theta_hat) ** 2:.5g}")
    return GroupAEResult(
        group=k,
        estimate=raw / (1.0 - eps_prime),
        raw=raw,
        interval=(a_lo * scale, a_hi * scale),
        powers=tuple(powers),
        hits=tuple(hits),
        shots=shots,
        oracle_calls=calls,
        eps_prime=eps_prime,
    )


def estimate_all_groups_ae(
    amplified: AmplifiedOracle,
    payload_spec: PayloadSpec,
    eps,
    delta: float,
    seed: int,
    shots: int = DEFAULT_SHOTS,
    ledger: QueryLedger | None = None,
    workers: int = 1,
    state: StateVector | None = None,
) -> ContributionEstimate:
    """Per-group AE for every group, each on its own substream of `seed`. eps may be one value per group."""
    n_gr = payload_spec.n_groups
    eps_by_group = np.broadcast_to(np.asarray(eps, dtype=float), (n_gr,))
    if state is None:
        state = amplified.prepare(QueryLedger())
    streams = [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(n_gr)]
    ledgers = [QueryLedger() for _ in range(n_gr)]

    def run(k):
        return estimate_per_group_ae(
            amplified, payload_spec, k, float(eps_by_group[k]), delta, streams[k], shots, ledgers[k], state
        )

    if workers > 1 and n_gr > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, range(n_gr)))
    else:
        results = [run(k) for k in range(n_gr)]

    ledger = ledger if ledger is not None else QueryLedger()
    for group_ledger in ledgers:
        ledger.absorb(group_ledger)
    logger.info(f"per-group AE: {sum(r.oracle_calls for r in results)} oracle calls over {n_gr} groups")
    return ContributionEstimate(
        values=tuple(r.raw for r in results),
        corrected=tuple(r.estimate for r in results),
        error_budget=float(eps_by_group.max()),
        mode="per-group-ae",
        ledger=ledger,
        eps_prime=results[0].eps_prime,
        intervals=tuple(r.interval for r in results),
    )
