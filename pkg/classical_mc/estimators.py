import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import pandas as pd

from classical_mc.sampler import McConfig, TailMoments, batch_generator, pairwise_merge, sample_scenarios
from complexity.budgets import tolerant_ceil
from qsim.ledger import QueryLedger
from risk_model.errors import ValidationError, ZeroTailError
from risk_model.merton import Portfolio, loss_table

logger = logging.getLogger(__name__)

MIN_VAR_SAMPLES = 100
MIN_EXPECTED_EXCEEDANCES = 10
# zero hits in N draws bounds p below 3/N at 95% confidence
RULE_OF_THREE = 3.0


@dataclass(frozen=True)
class McEstimate:
    estimates: tuple
    standard_errors: tuple
    tail_hits: int
    ledger: QueryLedger
    samples: int
    cvar: float
    cvar_standard_error: float

    @property
    def tail_probability(self) -> float:
        return self.tail_hits / self.samples

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "group": range(1, len(self.estimates) + 1),
                "estimate": self.estimates,
                "standard_error": self.standard_errors,
            }
        )


def _run_batches(config: McConfig, job) -> tuple:
    """job(batch_index, rng, size, ledger) for every batch, results in batch order."""
    sizes = config.batch_sizes()
    ledgers = [QueryLedger() for _ in sizes]

    def run(idx):
        return job(idx, batch_generator(config.seed, idx), sizes[idx], ledgers[idx])

    if config.workers > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(run, range(len(sizes))))
    else:
        results = [run(idx) for idx in range(len(sizes))]
    total = QueryLedger()
    for ledger in ledgers:
        total.absorb(ledger)
    return results, total


def _batch_losses(portfolio: Portfolio, config: McConfig, rng, size, ledger) -> tuple:
    _, defaults = sample_scenarios(portfolio, rng, size, config.factor_mode, config.disc, ledger)
    return loss_table(portfolio, defaults)


def estimate_var(portfolio: Portfolio, alpha: float, config: McConfig) -> float:
    """The ceil((1 - alpha) N)-th order statistic of N sampled losses."""
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    n = int(config.samples_requested)
    if n < MIN_VAR_SAMPLES:
        raise ValidationError(f"VaR estimation needs at least {MIN_VAR_SAMPLES} samples, got {n}")
    if n * alpha < MIN_EXPECTED_EXCEEDANCES:
        raise ValidationError(
            f"N*alpha = {n * alpha:.3g} < {MIN_EXPECTED_EXCEEDANCES}: too few samples for alpha={alpha}"
        )
    results, _ = _run_batches(config, lambda idx, rng, size, ledger: _batch_losses(portfolio, config, rng, size, ledger)[0])
    losses = np.sort(np.concatenate(results))
    rank = max(1, tolerant_ceil((1.0 - alpha) * n))
    var = float(losses[rank - 1])
    logger.info(f"mc: V_{alpha} = {var} from {n} samples (order statistic {rank})")
    return var


def estimate_cvar_contribs(portfolio: Portfolio, v: float, config: McConfig) -> McEstimate:
    """Plain rejection: mean of each group loss over the samples with L >= v."""

    def job(idx, rng, size, ledger):
        losses, group_losses = _batch_losses(portfolio, config, rng, size, ledger)
        tail = losses >= v
        columns = np.column_stack([losses[tail], group_losses[:, tail].T])
        logger.debug(f"mc batch {idx}: {int(tail.sum())} tail hits of {size}")
        return TailMoments.from_samples(columns)

    results, ledger = _run_batches(config, job)
    moments = pairwise_merge(results)
    n = int(config.samples_requested)
    if moments.count == 0:
        raise ZeroTailError(
            f"no sample out of {n} reached L >= {v}; Pr(L >= v) < {RULE_OF_THREE / n:.3g} "
            f"at 95% confidence (rule of three). Raise N or lower v"
        )
    if moments.count < MIN_EXPECTED_EXCEEDANCES:
        logger.warning(f"only {moments.count} tail hits at v={v}; standard errors are unreliable")
    errors = moments.standard_errors()
    logger.info(f"mc: {moments.count} tail hits of {n} at v={v}")
    return McEstimate(
        estimates=tuple(float(x) for x in moments.mean[1:]),
        standard_errors=tuple(float(x) for x in errors[1:]),
        tail_hits=moments.count,
        ledger=ledger,
        samples=n,
        cvar=float(moments.mean[0]),
        cvar_standard_error=float(errors[0]),
    )


def classical_sample_budget(sigma_max: float, eps: float, p: float, n_gr: float, delta: float) -> int:
    """sigma_max^2 log(N_gr/delta) / (eps^2 p), constant 1, up to constants."""
    for name, value in (("sigma_max", sigma_max), ("eps", eps), ("n_gr", n_gr)):
        if not value > 0.0:
            raise ValidationError(f"{name} must be positive, got {value}")
    if not 0.0 < p <= 1.0:
        raise ValidationError(f"p must lie in (0, 1], got {p}")
    if not 0.0 < delta < 1.0:
        raise ValidationError(f"delta must lie in (0, 1), got {delta}")
    return max(1, tolerant_ceil(sigma_max ** 2 * math.log(n_gr / delta) / (eps ** 2 * p)))


def classical_bernoulli_budget(sigma_max: float, eps: float, p: float, n_gr: float, delta: float, n_obl: int) -> int:
    """Arithmetic and Bernoulli draws: the sample budget times N_obl."""
    return classical_sample_budget(sigma_max, eps, p, n_gr, delta) * n_obl
