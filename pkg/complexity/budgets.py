import logging
import math
from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
import pandas as pd

from risk_model.errors import ValidationError

logger = logging.getLogger(__name__)

ADVANTAGE_RATIO_THRESHOLD = 10.0
# ceil() of a closed form lands one too high on float noise otherwise
CEIL_TOLERANCE = 1e-9

UP_TO_CONSTANTS = "up to constants and polylog factors (O~ / Theta~); natural log, constant 1"
RATIO_NOTE = (
    "regime mode reads the order-1e8 figure with C_max/eps = 100 (eps/C_max = 0.01); "
    "written as 'C_max/eps ~ 0.01' the ratio would give order 1e0"
)


def tolerant_ceil(x: float) -> int:
    return int(math.ceil(x - CEIL_TOLERANCE))


def _check_probability(name: str, value: float):
    if not 0.0 < value < 1.0:
        raise ValidationError(f"{name} must lie in (0, 1), got {value}")


def _check_positive(name: str, value):
    if value is None or not (value > 0 and math.isfinite(value)):
        raise ValidationError(f"{name} must be positive and finite, got {value}")


@dataclass(frozen=True)
class RegimeParams:
    """Inputs of the closed-form budgets. c_max, e_max, pbar_def and ebar are only needed by some formulas."""

    sigma_max: float
    eps: float
    p: float
    n_gr: int
    n_obl: int
    delta: float
    c_max: float | None = None
    e_max: float | None = None
    pbar_def: float | None = None
    ebar: float | None = None

    def __post_init__(self):
        for name in ("sigma_max", "eps", "n_gr", "n_obl"):
            _check_positive(name, getattr(self, name))
        if not 0.0 < self.p <= 1.0:
            raise ValidationError(f"p must lie in (0, 1], got {self.p}")
        _check_probability("delta", self.delta)
        if self.n_gr > self.n_obl:
            raise ValidationError(f"N_gr={self.n_gr} exceeds N_obl={self.n_obl}")
        if self.eps > self.sigma_max * math.sqrt(self.n_gr):
            raise ValidationError(
                f"eps={self.eps} exceeds sigma_max*sqrt(N_gr)={self.sigma_max * math.sqrt(self.n_gr):.6g} "
                f"(ratio {self.eps / (self.sigma_max * math.sqrt(self.n_gr)):.4g})"
            )
        for name in ("c_max", "e_max", "ebar"):
            value = getattr(self, name)
            if value is not None:
                _check_positive(name, value)
        if self.pbar_def is not None:
            _check_probability("pbar_def", self.pbar_def)

    @property
    def log_groups(self) -> float:
        return math.log(self.n_gr / self.delta)

    def require(self, *names):
        missing = [n for n in names if getattr(self, n) is None]
        if missing:
            raise ValidationError(f"this figure needs {', '.join(missing)}")


def quantum_budget(params: RegimeParams) -> tuple:
    """
    (U^SN calls, arithmetic + controlled-rotation calls) of the quantum method:
    sigma_max sqrt(N_gr) / (eps sqrt(p)) * log(max(C_max/eps, E_max/sigma_max)) * log(N_gr/delta),
    and the same times N_obl.
    """
    params.require("c_max", "e_max")
    amplification_log = math.log(max(params.c_max / params.eps, params.e_max / params.sigma_max))
    usn = (
        params.sigma_max * math.sqrt(params.n_gr) / (params.eps * math.sqrt(params.p))
        * amplification_log * params.log_groups
    )
    return usn, usn * params.n_obl


def classical_budget(params: RegimeParams) -> tuple:
    """(normal draws, arithmetic + Bernoulli draws): sigma_max^2 log(N_gr/delta) / (eps^2 p), and times N_obl."""
    draws = params.sigma_max ** 2 * params.log_groups / (params.eps ** 2 * params.p)
    return draws, draws * params.n_obl


class AdvantageVerdict(NamedTuple):
    lhs: float
    rhs: float
    quantum_favored: bool


def regime_substitution(pbar_def: float, ebar: float, eps_over_cmax: float) -> dict:
    """sigma_max^2 = pbar (1 - pbar) ebar^2, C_max = pbar ebar and eps = (eps/C_max) C_max."""
    _check_probability("pbar_def", pbar_def)
    _check_positive("ebar", ebar)
    _check_positive("eps_over_cmax", eps_over_cmax)
    c_max = pbar_def * ebar
    return {
        "sigma_max": math.sqrt(pbar_def * (1.0 - pbar_def)) * ebar,
        "c_max": c_max,
        "eps": eps_over_cmax * c_max,
    }


def advantage_condition(
    params: RegimeParams,
    regime: bool = False,
    threshold: float = ADVANTAGE_RATIO_THRESHOLD,
) -> AdvantageVerdict:
    """
    Quantum is favoured when lhs exceeds rhs by `threshold`.
    General form: lhs = sigma_max^2 / (eps^2 p), rhs = N_gr.
    Regime form: lhs = (C_max/eps)^2 (1 - pbar) / (p pbar), rhs = N_obl.
    """
    _check_positive("threshold", threshold)
    if regime:
        params.require("c_max", "pbar_def")
        pbar = params.pbar_def
        lhs = (params.c_max / params.eps) ** 2 * (1.0 - pbar) / (params.p * pbar)
        rhs = float(params.n_obl)
    else:
        lhs = params.sigma_max ** 2 / (params.eps ** 2 * params.p)
        rhs = float(params.n_gr)
    favored = lhs > threshold * rhs
    logger.info(f"advantage: lhs={lhs:.4g}, rhs={rhs:.4g}, favoured={favored}")
    return AdvantageVerdict(lhs=lhs, rhs=rhs, quantum_favored=favored)


def sweep_table(base: RegimeParams, eps_values, n_gr_values, regime: bool = False) -> pd.DataFrame:
    """Both budgets and the advantage verdict over an (eps, N_gr) grid."""
    rows = []
    for n_gr in n_gr_values:
        for eps in eps_values:
            params = replace(base, eps=float(eps), n_gr=int(n_gr))
            q_usn, q_arith = quantum_budget(params)
            c_draws, c_arith = classical_budget(params)
            verdict = advantage_condition(params, regime=regime)
            rows.append(
                {
                    "eps": float(eps),
                    "n_gr": int(n_gr),
                    "quantum_usn": q_usn,
                    "quantum_arith": q_arith,
                    "classical_draws": c_draws,
                    "classical_arith": c_arith,
                    "lhs": verdict.lhs,
                    "rhs": verdict.rhs,
                    "quantum_favored": verdict.quantum_favored,
                }
            )
    return pd.DataFrame(rows)


def strip_log_factors(calls: float, n_gr: int, delta: float, polylog: float) -> float:
    """
    Remove log(N_gr/delta) carried by n and the estimator's polylog charge
    from a measured call count, leaving the sqrt(N_gr)/eps core.
    """
    return calls / (polylog * math.log(n_gr / delta))


def fit_scaling_exponents(eps, n_gr, calls) -> tuple:
    """Least-squares fit of log(calls) = c + a log(eps) + b log(N_gr); returns (a, b)."""
    eps = np.asarray(eps, dtype=float)
    n_gr = np.asarray(n_gr, dtype=float)
    calls = np.asarray(calls, dtype=float)
    if np.any(calls <= 0):
        raise ValidationError("call counts must be positive to fit on a log scale")
    design = np.column_stack([np.ones_like(eps), np.log(eps), np.log(n_gr)])
    coef, *_ = np.linalg.lstsq(design, np.log(calls), rcond=None)
    return float(coef[1]), float(coef[2])
