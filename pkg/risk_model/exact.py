import logging
import math
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from risk_model.discretization import DiscreteSN
from risk_model.errors import GuardExceededError, ValidationError, ZeroTailError
from risk_model.merton import Portfolio, default_prob_matrix, loss_table

logger = logging.getLogger(__name__)

STATE_GUARD = 2 ** 24
# realised losses are grouped into support points at this many decimals
LOSS_DECIMALS = 10


def default_patterns(n_obligors: int) -> np.ndarray:
    """(2^N, N) matrix; row j holds the bits of j, obligor k on bit k."""
    j = np.arange(2 ** n_obligors)[:, None]
    return ((j >> np.arange(n_obligors)) & 1).astype(np.int8)


@dataclass(frozen=True, eq=False)
class ScenarioLaw:
    """Joint law P(i; y) of the discretised factor index and the default vector."""

    portfolio: Portfolio
    disc: DiscreteSN
    weights: np.ndarray        # (N_SN, 2^N_obl)
    losses: np.ndarray         # (2^N_obl,)
    group_losses: np.ndarray   # (N_gr, 2^N_obl)

    @property
    def pattern_probs(self) -> np.ndarray:
        return self.weights.sum(axis=0)

    def tail_mask(self, v: float) -> np.ndarray:
        return self.losses >= v

    def tail_probability(self, v: float) -> float:
        return math.fsum(self.weights[:, self.tail_mask(v)].ravel())


def scenario_law(portfolio: Portfolio, disc: DiscreteSN) -> ScenarioLaw:
    n_states = disc.count * 2 ** portfolio.n_obligors
    if n_states > STATE_GUARD:
        raise GuardExceededError(
            f"enumeration needs {n_states} states (N_SN={disc.count}, N_obl={portfolio.n_obligors}); "
            f"guard is {STATE_GUARD}"
        )
    patterns = default_patterns(portfolio.n_obligors)
    pdef = default_prob_matrix(portfolio, disc.points)          # (N_SN, N_obl)
    weights = np.repeat(disc.probs[:, None], len(patterns), axis=1)
    for k in range(portfolio.n_obligors):
        defaulted = patterns[:, k] == 1
        weights *= np.where(defaulted[None, :], pdef[:, k:k + 1], 1.0 - pdef[:, k:k + 1])
    losses, group_losses = loss_table(portfolio, patterns)
    logger.debug(f"enumerated {n_states} scenario labels")
    return ScenarioLaw(portfolio=portfolio, disc=disc, weights=weights, losses=losses, group_losses=group_losses)


@dataclass(frozen=True)
class RiskReport:
    var_level: float | None
    var: float | None
    cvar_threshold: float
    tail_prob: float
    cvar: float
    cvar_contribs: tuple
    var_contribs: tuple | None = None
    cvar_sigmas: tuple = field(default=())
    group_exposures: tuple = field(default=())

    @property
    def c_max(self) -> float:
        return max(self.cvar_contribs)

    @property
    def sigma_max(self) -> float:
        return max(self.cvar_sigmas)

    @property
    def e_max(self) -> float:
        return max(self.group_exposures)

    def to_dict(self) -> dict:
        """Flat key-value view, groups numbered from 1."""
        doc = {
            "var_level": self.var_level,
            "var": self.var,
            "cvar_threshold": self.cvar_threshold,
            "tail_prob": self.tail_prob,
            "cvar": self.cvar,
            "c_max": self.c_max,
            "sigma_max": self.sigma_max,
            "e_max": self.e_max,
        }
        for k, value in enumerate(self.cvar_contribs, start=1):
            doc[f"cvar_contrib_{k}"] = value
        for k, value in enumerate(self.var_contribs or (), start=1):
            doc[f"var_contrib_{k}"] = value
        return doc

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame(
            {
                "group": range(1, len(self.cvar_contribs) + 1),
                "cvar_contrib": self.cvar_contribs,
                "var_contrib": self.var_contribs if self.var_contribs is not None else [None] * len(self.cvar_contribs),
                "sigma": self.cvar_sigmas,
                "group_exposure": self.group_exposures,
            }
        )


def value_at_risk(law: ScenarioLaw, alpha: float) -> float:
    """
    inf{x : Pr(L >= x) <= alpha}. On a finite support this is the smallest
    support point s with Pr(L > s) <= alpha, so Pr(L = V_alpha) > 0.
    """
    if not 0.0 < alpha < 1.0:
        raise ValidationError(f"alpha must lie in (0, 1), got {alpha}")
    support, pmf = loss_distribution(law)
    for idx, s in enumerate(support):
        if math.fsum(pmf[idx + 1:]) <= alpha:
            return float(s)
    return float(support[-1])


def loss_distribution(law: ScenarioLaw) -> tuple:
    """Sorted support of L and its probability mass, only atoms with positive mass."""
    rounded = np.round(law.losses, LOSS_DECIMALS)
    support = np.unique(rounded)
    pmf = np.array([math.fsum(law.weights[:, rounded == s].ravel()) for s in support])
    keep = pmf > 0.0
    return support[keep], pmf[keep]


def _conditional_moments(law: ScenarioLaw, mask: np.ndarray) -> tuple:
    """Mass of the event, and the unnormalised first moments of L and of every L_K on it."""
    pattern_mass = law.weights[:, mask]
    mass = math.fsum(pattern_mass.ravel())
    total = math.fsum((pattern_mass * law.losses[mask]).ravel())
    firsts = np.array([math.fsum((pattern_mass * lk[mask]).ravel()) for lk in law.group_losses])
    return mass, total, firsts


def _conditional_sigmas(law: ScenarioLaw, mask: np.ndarray, mass: float, means: np.ndarray) -> np.ndarray:
    pattern_mass = law.weights[:, mask]
    return np.array(
        [
            math.sqrt(math.fsum((pattern_mass * (lk[mask] - mean) ** 2).ravel()) / mass)
            for lk, mean in zip(law.group_losses, means)
        ]
    )


def enumerate_exact(
    portfolio: Portfolio,
    disc: DiscreteSN,
    alpha: float | None = None,
    v: float | None = None,
) -> RiskReport:
    """
    Brute-force VaR, CVaR and their group contributions on the discretised law.
    With only alpha given the CVaR threshold is v = V_alpha.
    """
    if alpha is None and v is None:
        raise ValidationError("enumerate_exact needs alpha, a threshold v, or both")
    law = scenario_law(portfolio, disc)

    var = var_contribs = None
    if alpha is not None:
        var = value_at_risk(law, alpha)
        at_var = np.round(law.losses, LOSS_DECIMALS) == var
        mass, _, firsts = _conditional_moments(law, at_var)
        var_contribs = tuple(float(x) for x in firsts / mass)
    if v is None:
        v = var

    tail = law.tail_mask(v)
    mass, total, firsts = _conditional_moments(law, tail)
    if mass <= 0.0:
        raise ZeroTailError(f"Pr(L >= {v}) = 0 on this instance; no tail scenarios to condition on")
    contribs = firsts / mass
    sigmas = _conditional_sigmas(law, tail, mass, contribs)
    logger.info(f"exact: p={mass:.6g}, C_v={total / mass:.6g} at v={v}")
    return RiskReport(
        var_level=alpha,
        var=var,
        cvar_threshold=float(v),
        tail_prob=min(mass, 1.0),
        cvar=total / mass,
        cvar_contribs=tuple(float(x) for x in contribs),
        var_contribs=var_contribs,
        cvar_sigmas=tuple(float(s) for s in sigmas),
        group_exposures=tuple(float(e) for e in portfolio.group_exposures),
    )


def tail_constants(report: RiskReport) -> dict:
    """C_max, sigma_max and E_max of a report, the inputs to the amplification budget."""
    return {"c_max": report.c_max, "sigma_max": report.sigma_max, "e_max": report.e_max}
