import hashlib
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from classical_mc.estimators import McEstimate, estimate_cvar_contribs, estimate_var
from classical_mc.sampler import FACTOR_MODES, McConfig
from complexity.budgets import (
    RATIO_NOTE,
    UP_TO_CONSTANTS,
    RegimeParams,
    advantage_condition,
    classical_budget,
    quantum_budget,
    regime_substitution,
    sweep_table,
)
from estimation.estimators import (
    MODES as ESTIMATOR_MODES,
    PERTURBATIONS,
    POLYLOG_CONVENTIONS,
    EstimatorConfig,
    estimate_all_groups_ae,
    estimate_exact,
    estimate_surrogate,
)
from estimation.variance import measure_from_state, variance_stats
from qsim.amplification import EpsPrimeBudget, build_u_p, flag_zero_mass
from qsim.fixed_point import FixedPointFormat
from qsim.ledger import QueryLedger
from qsim.oracles import PayloadSpec, TailOracleSpec, build_u_gev, payload_call_cost
from risk_model.discretization import DEFAULT_HALFWIDTH, DEFAULT_N_SN, discretize_std_normal
from risk_model.errors import ValidationError
from risk_model.exact import RiskReport, enumerate_exact
from risk_model.portfolio_io import FLOAT_FORMAT, format_value, load_portfolio, portfolio_to_dict

logger = logging.getLogger(__name__)

COMMANDS = ("exact", "mc", "qsim", "budget", "report")
SEED_ENV = "CVAR_QSIM_SEED"
# mc estimates must sit within this many standard errors of the exact contributions
MC_ACCEPTANCE_SIGMAS = 3.0
# relative float slack on the flag-0 cap and on p_bound <= p
EPS_PRIME_SLACK = 1e-9
# the U_P state is dumped to CSV only for small label spaces
SNAPSHOT_MAX_DIMENSION = 4096
SNAPSHOT_AMPLITUDE_FLOOR = 1e-12


def default_seed() -> int:
    value = os.environ.get(SEED_ENV, "0")
    try:
        return int(value)
    except ValueError:
        raise ValidationError(f"{SEED_ENV} must be an integer, got {value!r}")


@dataclass(frozen=True)
class RunConfig:
    command: str
    portfolio_path: str | None = None
    alpha: float | None = None
    v: float | None = None
    n_sn: int = DEFAULT_N_SN
    halfwidth: float = DEFAULT_HALFWIDTH
    total_bits: int = 32
    fraction_bits: int = 24
    quantize_angles: bool = False
    estimator: str = "exact"
    eps: float = 0.1
    delta: float = 0.05
    seed: int = 0
    samples: int = 100_000
    batch: int = 65_536
    factor_mode: str = "discrete"
    workers: int = 1
    shots: int = 100
    perturbation: str = "uniform"
    polylog: str = "n-log2n-log2d"
    p_bound: float | None = None
    # budget-only inputs; anything left None is taken from the exact enumeration
    p: float | None = None
    sigma_max: float | None = None
    c_max: float | None = None
    e_max: float | None = None
    n_gr: int | None = None
    n_obl: int | None = None
    regime: bool = False
    pbar_def: float | None = None
    ebar: float | None = None
    eps_over_cmax: float | None = None
    advantage_threshold: float = 10.0
    output_dir: str | None = None

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValidationError(f"command must be one of {COMMANDS}, got {self.command!r}")
        needs_portfolio = self.command != "budget" or not self._budget_inputs_complete()
        if needs_portfolio and not self.portfolio_path:
            raise ValidationError(f"'{self.command}' needs a portfolio file")
        if self.command in ("exact", "mc", "qsim", "report") and self.alpha is None and self.v is None:
            raise ValidationError("give a VaR level alpha, a threshold v, or both")
        if self.alpha is not None and not 0.0 < self.alpha < 1.0:
            raise ValidationError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.estimator not in ESTIMATOR_MODES:
            raise ValidationError(f"estimator must be one of {ESTIMATOR_MODES}, got {self.estimator!r}")
        if self.factor_mode not in FACTOR_MODES:
            raise ValidationError(f"factor mode must be one of {FACTOR_MODES}, got {self.factor_mode!r}")
        if self.perturbation not in PERTURBATIONS:
            raise ValidationError(f"perturbation must be one of {PERTURBATIONS}, got {self.perturbation!r}")
        if self.polylog not in POLYLOG_CONVENTIONS:
            raise ValidationError(f"unknown polylog convention {self.polylog!r}")
        if not self.eps > 0.0:
            raise ValidationError(f"eps must be positive, got {self.eps}")
        if not 0.0 < self.delta < 1.0:
            raise ValidationError(f"delta must lie in (0, 1), got {self.delta}")
        if self.samples < 1 or self.shots < 1 or self.workers < 1:
            raise ValidationError("samples, shots and workers must be positive")
        if self.p_bound is not None and not 0.0 < self.p_bound <= 1.0:
            raise ValidationError(f"p_bound must lie in (0, 1], got {self.p_bound}")
        if self.regime and None in (self.pbar_def, self.ebar, self.eps_over_cmax):
            raise ValidationError("regime mode needs pbar_def, ebar and eps_over_cmax")
        FixedPointFormat(self.total_bits, self.fraction_bits)

    def _budget_inputs_complete(self) -> bool:
        if self.regime:
            return None not in (self.p, self.n_gr, self.n_obl, self.pbar_def, self.ebar, self.eps_over_cmax)
        return None not in (self.p, self.sigma_max, self.c_max, self.e_max, self.n_gr, self.n_obl)

    @property
    def fixed_point(self) -> FixedPointFormat:
        return FixedPointFormat(self.total_bits, self.fraction_bits)


def config_hash(config: RunConfig, portfolio_doc: dict | None) -> str:
    """sha1 over 'blob <len>\\0' + canonical JSON of the portfolio document and the run config."""
    doc = {"config": {k: v for k, v in asdict(config).items() if k != "output_dir"}, "portfolio": portfolio_doc}
    payload = json.dumps(doc, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha1(b"blob %d\0" % len(payload) + payload).hexdigest()


@dataclass
class RunResult:
    """Everything a run produced: one flat summary plus named tables."""

    command: str
    summary: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)


class _StageTimer:
    def __init__(self):
        self._start = {}

    def begin(self, stage: str):
        logger.info(f"stage {stage}: begin")
        self._start[stage] = time.perf_counter()

    def end(self, stage: str, **extra):
        elapsed = time.perf_counter() - self._start.pop(stage)
        detail = ", ".join(f"{k}={v}" for k, v in extra.items())
        logger.info(f"stage {stage}: end after {elapsed:.3f}s{' (' + detail + ')' if detail else ''}")


def _ledger_fields(ledger: QueryLedger, prefix: str) -> dict:
    return {f"{prefix}_{name}": value for name, value in ledger.to_dict().items()}


def _run_exact(config: RunConfig, portfolio, disc) -> RiskReport:
    return enumerate_exact(portfolio, disc, alpha=config.alpha, v=config.v)


def _exact_section(result: RunResult, report: RiskReport):
    result.summary.update({f"exact_{k}": v for k, v in report.to_dict().items()})
    result.tables["exact"] = report.to_frame()


def _run_mc(config: RunConfig, portfolio, disc, v: float | None, result: RunResult) -> McEstimate:
    mc_config = McConfig(
        seed=config.seed,
        samples_requested=config.samples,
        batch=config.batch,
        target_accuracy=config.eps,
        confidence=1.0 - config.delta,
        factor_mode=config.factor_mode,
        disc=disc,
        workers=config.workers,
    )
    if config.alpha is not None:
        result.summary["mc_var"] = estimate_var(portfolio, config.alpha, mc_config)
    if v is None:
        # pure classical run: condition on the sampled VaR
        v = result.summary["mc_var"]
    estimate = estimate_cvar_contribs(portfolio, v, mc_config)
    result.summary.update(
        {
            "mc_threshold": v,
            "mc_samples": estimate.samples,
            "mc_tail_hits": estimate.tail_hits,
            "mc_tail_prob": estimate.tail_probability,
            "mc_cvar": estimate.cvar,
            "mc_cvar_standard_error": estimate.cvar_standard_error,
        }
    )
    result.summary.update(_ledger_fields(estimate.ledger, "mc_ledger"))
    frame = estimate.to_frame()
    for name, value in estimate.ledger.to_dict().items():
        frame[name] = value
    result.tables["mc"] = frame
    return estimate


def _run_qsim(config: RunConfig, portfolio, disc, truth: RiskReport, result: RunResult):
    v = truth.cvar_threshold
    oracle = build_u_gev(TailOracleSpec(portfolio, disc, v, config.fixed_point, config.quantize_angles))
    budget = EpsPrimeBudget(
        eps=config.eps,
        c_max=truth.c_max,
        e_max=truth.e_max,
        sigma_max=truth.sigma_max,
        n_gr=portfolio.n_groups,
    )
    p_bound = config.p_bound if config.p_bound is not None else oracle.tail_probability
    if p_bound > oracle.tail_probability * (1.0 + EPS_PRIME_SLACK):
        raise ValidationError(
            f"p_bound={p_bound:.6g} is above the tail probability p={oracle.tail_probability:.6g}; "
            f"it must be a lower bound"
        )
    amplified = build_u_p(oracle, p_bound, budget)

    prep_ledger = QueryLedger()
    state = amplified.prepare(prep_ledger)
    state.check_norm()
    eps_prime = flag_zero_mass(state)
    payload = PayloadSpec(portfolio)

    estimator_ledger = QueryLedger()
    estimator_config = EstimatorConfig(
        mode=config.estimator,
        eps=config.eps,
        delta=config.delta,
        sigma_max=truth.sigma_max,
        n_gr=portfolio.n_groups,
        polylog=config.polylog,
        perturbation=config.perturbation,
        shots=config.shots,
    )
    if config.estimator == "exact":
        estimate = estimate_exact(state, payload, config.eps, estimator_ledger)
    elif config.estimator == "surrogate":
        exact_means = estimate_exact(state, payload, config.eps, QueryLedger())
        _, sigma_tilde = variance_stats(measure_from_state(state), payload)
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([config.seed])))
        estimate = estimate_surrogate(
            exact_means.values,
            sigma_tilde,
            estimator_config.n,
            config.delta,
            rng,
            eps=config.eps,
            eps_prime=eps_prime,
            sigma_max=truth.sigma_max,
            perturbation=config.perturbation,
            up_cost=amplified.call_cost(),
            uxi_cost=payload_call_cost(payload),
            polylog=config.polylog,
            ledger=estimator_ledger,
        )
    else:
        estimate = estimate_all_groups_ae(
            amplified,
            payload,
            config.eps,
            config.delta,
            config.seed,
            shots=config.shots,
            ledger=estimator_ledger,
            workers=config.workers,
            state=state,
        )

    truth_values = np.array(truth.cvar_contribs)
    errors = np.abs(np.array(estimate.values) - truth_values)
    frame = estimate.to_frame()
    frame.insert(3, "truth", truth_values)
    frame.insert(4, "abs_error", errors)
    frame.insert(5, "within_eps", errors <= config.eps)
    result.tables["qsim"] = frame
    result.tables["schedule"] = pd.DataFrame(
        {
            "j": range(1, amplified.schedule.iterations + 1),
            "alpha": [a for a, _ in amplified.schedule.phases],
            "beta": [b for _, b in amplified.schedule.phases],
        }
    )
    if state.basis.dimension <= SNAPSHOT_MAX_DIMENSION:
        result.tables["state"] = state.to_frame(threshold=SNAPSHOT_AMPLITUDE_FLOOR)
    result.summary.update(
        {
            "qsim_threshold": v,
            "qsim_tail_prob": oracle.tail_probability,
            "qsim_p_bound": p_bound,
            "qsim_estimator": config.estimator,
            "qsim_eps": config.eps,
            "qsim_delta": config.delta,
            "qsim_eps_prime": eps_prime,
            "qsim_eps_prime_cap": budget.cap,
            "qsim_schedule_length": amplified.schedule.length,
            "qsim_n": estimator_config.n,
            "qsim_max_abs_error": float(errors.max()),
        }
    )
    result.summary.update(_ledger_fields(prep_ledger, "qsim_prep_ledger"))
    result.summary.update(_ledger_fields(estimator_ledger, "qsim_estimator_ledger"))
    return estimate, errors


def _run_budget(config: RunConfig, truth: RiskReport | None, portfolio, result: RunResult):
    def pick(value, fallback):
        return value if value is not None else fallback

    n_gr = pick(config.n_gr, portfolio.n_groups if portfolio else None)
    n_obl = pick(config.n_obl, portfolio.n_obligors if portfolio else None)
    p = pick(config.p, truth.tail_prob if truth else None)
    if config.regime:
        derived = regime_substitution(config.pbar_def, config.ebar, config.eps_over_cmax)
        params = RegimeParams(
            sigma_max=derived["sigma_max"],
            eps=derived["eps"],
            p=p,
            n_gr=n_gr,
            n_obl=n_obl,
            delta=config.delta,
            c_max=derived["c_max"],
            e_max=pick(config.e_max, config.ebar),
            pbar_def=config.pbar_def,
            ebar=config.ebar,
        )
    else:
        params = RegimeParams(
            sigma_max=pick(config.sigma_max, truth.sigma_max if truth else None),
            eps=config.eps,
            p=p,
            n_gr=n_gr,
            n_obl=n_obl,
            delta=config.delta,
            c_max=pick(config.c_max, truth.c_max if truth else None),
            e_max=pick(config.e_max, truth.e_max if truth else None),
        )
    q_usn, q_arith = quantum_budget(params)
    c_draws, c_arith = classical_budget(params)
    verdict = advantage_condition(params, regime=config.regime, threshold=config.advantage_threshold)
    result.summary.update(
        {
            "budget_quantum_usn": q_usn,
            "budget_quantum_arith": q_arith,
            "budget_classical_draws": c_draws,
            "budget_classical_arith": c_arith,
            "advantage_lhs": verdict.lhs,
            "advantage_rhs": verdict.rhs,
            "advantage_threshold": config.advantage_threshold,
            "quantum_favored": verdict.quantum_favored,
            "budget_note": UP_TO_CONSTANTS,
        }
    )
    if config.regime:
        result.summary["regime_note"] = RATIO_NOTE
    eps_values = [params.eps * f for f in (2.0, 1.0, 0.5, 0.25) if params.eps * f <= params.sigma_max]
    n_gr_values = sorted({g for g in (1, 2, 4, 8, params.n_gr) if g <= params.n_obl})
    result.tables["budget_sweep"] = sweep_table(params, eps_values, n_gr_values, regime=config.regime)


def run_pipeline(config: RunConfig) -> RunResult:
    """Execute one subcommand and collect its report documents."""
    timer = _StageTimer()
    result = RunResult(command=config.command)

    portfolio = disc = truth = None
    portfolio_doc = None
    if config.portfolio_path:
        timer.begin("load")
        portfolio = load_portfolio(config.portfolio_path)
        portfolio_doc = portfolio_to_dict(portfolio)
        disc = discretize_std_normal(config.n_sn, config.halfwidth)
        timer.end("load", n_obl=portfolio.n_obligors, n_gr=portfolio.n_groups)
    result.summary["command"] = config.command
    result.summary["config_hash"] = config_hash(config, portfolio_doc)
    result.summary["seed"] = config.seed

    needs_truth = config.command in ("exact", "qsim", "report") or (
        config.command == "budget" and portfolio is not None and (config.alpha is not None or config.v is not None)
    )
    if needs_truth:
        timer.begin("exact")
        truth = _run_exact(config, portfolio, disc)
        _exact_section(result, truth)
        timer.end("exact", p=f"{truth.tail_prob:.6g}")

    if config.command in ("mc", "report"):
        timer.begin("mc")
        v = config.v if config.v is not None else (truth.cvar_threshold if truth else None)
        estimate = _run_mc(config, portfolio, disc, v, result)
        timer.end("mc", hits=estimate.tail_hits)
        if truth is not None:
            for k, (est, se, exact) in enumerate(
                zip(estimate.estimates, estimate.standard_errors, truth.cvar_contribs), start=1
            ):
                if abs(est - exact) > MC_ACCEPTANCE_SIGMAS * se:
                    result.failures.append(
                        f"mc contribution {k}: |{est:.6g} - {exact:.6g}| > {MC_ACCEPTANCE_SIGMAS} x {se:.3g}"
                    )

    if config.command in ("qsim", "report"):
        timer.begin("qsim")
        _, errors = _run_qsim(config, portfolio, disc, truth, result)
        timer.end("qsim", max_error=f"{errors.max():.3g}")
        for k, err in enumerate(errors, start=1):
            if err > config.eps:
                result.failures.append(f"qsim contribution {k}: error {err:.3g} exceeds eps={config.eps}")
        cap = result.summary["qsim_eps_prime_cap"]
        if result.summary["qsim_eps_prime"] > cap * (1.0 + EPS_PRIME_SLACK):
            result.failures.append(f"qsim eps'={result.summary['qsim_eps_prime']:.3g} exceeds its cap {cap:.3g}")

    if config.command == "budget":
        timer.begin("budget")
        _run_budget(config, truth, portfolio, result)
        timer.end("budget")

    result.summary["acceptance_failures"] = len(result.failures)
    return result


def write_reports(result: RunResult, output_dir: str | os.PathLike) -> list:
    """summary.txt as 'key = value' lines plus one CSV per table; returns the written paths."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    written = []
    summary_path = output_dir / f"{result.command}_summary.txt"
    with open(summary_path, "w", encoding="utf-8") as f:
        for key, value in result.summary.items():
            f.write(f"{key} = {format_value(value)}\n")
        for failure in result.failures:
            f.write(f"failure = {failure}\n")
    written.append(summary_path)
    for name, frame in result.tables.items():
        path = output_dir / f"{result.command}_{name}.csv"
        frame.to_csv(path, index=False, float_format=FLOAT_FORMAT)
        written.append(path)
    return written
