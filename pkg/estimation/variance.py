import math

import numpy as np

from qsim.oracles import PayloadSpec, payload_table
from qsim.statevector import StateVector
from risk_model.errors import ValidationError, ZeroTailError
from risk_model.exact import ScenarioLaw


def measure_from_state(state: StateVector) -> np.ndarray:
    """Born probabilities as an (N_SN, 2^N_obl, 2) measure over labels (i, y, w)."""
    return state.probabilities()


def measure_from_law(law: ScenarioLaw, v: float, eps_prime: float) -> np.ndarray:
    """
    The measure the estimator sees after amplification with flag-0 mass eps':
    (1 - eps') P/p on tail labels with w = 1, eps' times the non-tail law on w = 0.
    """
    if not 0.0 <= eps_prime < 1.0:
        raise ValidationError(f"eps' must lie in [0, 1), got {eps_prime}")
    tail = law.tail_mask(v)
    p = law.tail_probability(v)
    if p <= 0.0:
        raise ZeroTailError(f"Pr(L >= {v}) = 0")
    measure = np.zeros(law.weights.shape + (2,))
    measure[:, tail, 1] = (1.0 - eps_prime) * law.weights[:, tail] / p
    if eps_prime > 0.0:
        rest = 1.0 - p
        # with every label in the tail the garbage branch reuses the full law
        garbage = np.where(tail[None, :], 0.0, law.weights) / rest if rest > 0.0 else law.weights
        measure[:, :, 0] = eps_prime * garbage
    return measure


def _payload_moments(measure: np.ndarray, table: np.ndarray) -> tuple:
    """Per-group (sum P xi, sum P xi^2) for a label measure."""
    pattern_measure = measure.sum(axis=0)
    first = np.array([math.fsum((pattern_measure * xi).ravel()) for xi in table])
    second = np.array([math.fsum((pattern_measure * xi ** 2).ravel()) for xi in table])
    return first, second


def tail_moment_terms(measure: np.ndarray, spec: PayloadSpec) -> dict:
    """
    eps', and the tail moments m1, m2 of each payload under the flag-1 conditional law.
    The payload variance under the full measure is (1 - eps') m2 - (1 - eps')^2 m1^2.
    """
    table = payload_table(spec)
    tail_mass = math.fsum(measure[:, :, 1].ravel())
    if tail_mass <= 0.0:
        raise ZeroTailError("the measure puts no mass on flag-1 labels")
    conditional = np.zeros_like(measure)
    conditional[:, :, 1] = measure[:, :, 1] / tail_mass
    m1, m2 = _payload_moments(conditional, table)
    return {"eps_prime": 1.0 - tail_mass, "m1": m1, "m2": m2}


def variance_stats(measure: np.ndarray, spec: PayloadSpec) -> tuple:
    """
    (sigma_K, sigma_tilde_K): standard deviation of L_K given the tail, and of the
    payload xi_K under the full measure.
    """
    terms = tail_moment_terms(measure, spec)
    sigma2 = np.maximum(terms["m2"] - terms["m1"] ** 2, 0.0)
    first, second = _payload_moments(measure / math.fsum(measure.ravel()), payload_table(spec))
    sigma_tilde2 = np.maximum(second - first ** 2, 0.0)
    return np.sqrt(sigma2), np.sqrt(sigma_tilde2)


def variance_from_tail_moments(terms: dict) -> np.ndarray:
    keep = 1.0 - terms["eps_prime"]
    return keep * terms["m2"] - keep ** 2 * terms["m1"] ** 2
