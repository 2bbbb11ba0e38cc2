import logging
import math
from dataclasses import dataclass

import numpy as np
import pandas as pd

from qsim.ledger import QueryLedger
from risk_model.errors import GuardExceededError, ValidationError

logger = logging.getLogger(__name__)

AMPLITUDE_GUARD = 2 ** 24
NORM_TOLERANCE = 1e-10
WEIGHT_TOLERANCE = 1e-12
# one CDF chain plus one arccos-sqrt per rotation angle
ANGLE_ARITHMETIC_COST = 2


@dataclass(frozen=True)
class ScenarioBasis:
    """
    Labels (i, y, w): grid index i < N_SN, default bits y (obligor k on bit k), flag w.
    Linear index = (i << (N_obl + 1)) | (y << 1) | w.
    """

    grid_size: int
    obligor_count: int

    def __post_init__(self):
        if self.grid_size < 2 or self.obligor_count < 1:
            raise ValidationError(f"basis needs N_SN >= 2 and N_obl >= 1, got {self.grid_size}/{self.obligor_count}")
        if self.dimension > AMPLITUDE_GUARD:
            raise GuardExceededError(
                f"state dimension N_SN*2^(N_obl+1) = {self.dimension} exceeds the dense guard {AMPLITUDE_GUARD}"
            )

    @property
    def n_patterns(self) -> int:
        return 2 ** self.obligor_count

    @property
    def dimension(self) -> int:
        return self.grid_size * 2 ** (self.obligor_count + 1)

    def index(self, i: int, y: int, w: int) -> int:
        if not (0 <= i < self.grid_size and 0 <= y < self.n_patterns and w in (0, 1)):
            raise ValidationError(f"label ({i}, {y}, {w}) outside the basis")
        return (i << (self.obligor_count + 1)) | (y << 1) | w

    def label(self, index: int) -> tuple:
        return index >> (self.obligor_count + 1), (index >> 1) & (self.n_patterns - 1), index & 1

    def label_arrays(self) -> tuple:
        idx = np.arange(self.dimension)
        return idx >> (self.obligor_count + 1), (idx >> 1) & (self.n_patterns - 1), idx & 1

    def shape(self) -> tuple:
        return self.grid_size, self.n_patterns, 2


class StateVector:
    """Dense amplitudes over a ScenarioBasis. Owned exclusively while an operation mutates it."""

    def __init__(self, basis: ScenarioBasis, amplitudes: np.ndarray):
        amplitudes = np.asarray(amplitudes, dtype=np.complex128)
        if amplitudes.shape != (basis.dimension,):
            raise ValidationError(f"expected {basis.dimension} amplitudes, got shape {amplitudes.shape}")
        self.basis = basis
        self.amplitudes = amplitudes

    def copy(self) -> "StateVector":
        return StateVector(self.basis, self.amplitudes.copy())

    def view(self) -> np.ndarray:
        """(N_SN, 2^N_obl, 2) view sharing memory with the amplitudes."""
        return self.amplitudes.reshape(self.basis.shape())

    def probabilities(self) -> np.ndarray:
        return np.abs(self.view()) ** 2

    def norm(self) -> float:
        return float(np.linalg.norm(self.amplitudes))

    def check_norm(self, tol: float = NORM_TOLERANCE):
        norm = self.norm()
        if abs(norm - 1.0) > tol:
            raise GuardExceededError(f"state norm drifted to {norm!r}")

    def to_frame(self, threshold: float = 0.0) -> pd.DataFrame:
        """(label, re, im) rows for amplitudes with modulus above `threshold`."""
        keep = np.nonzero(np.abs(self.amplitudes) > threshold)[0]
        i, y, w = self.basis.label_arrays()
        width = self.basis.obligor_count
        # bit string printed with obligor 1 first
        labels = [f"{i[j]}:{format(y[j], f'0{width}b')[::-1]}:{w[j]}" for j in keep]
        return pd.DataFrame(
            {"label": labels, "re": self.amplitudes.real[keep], "im": self.amplitudes.imag[keep]}
        )


def zero_state(basis: ScenarioBasis) -> StateVector:
    amplitudes = np.zeros(basis.dimension, dtype=np.complex128)
    amplitudes[0] = 1.0
    return StateVector(basis, amplitudes)


class BasisPermutation:
    """Reversible arithmetic at oracle level: label j moves to mapping[j]."""

    def __init__(self, basis: ScenarioBasis, mapping: np.ndarray, cost: int, name: str = "permutation"):
        mapping = np.asarray(mapping, dtype=np.int64)
        if mapping.shape != (basis.dimension,):
            raise ValidationError(f"{name}: mapping must cover all {basis.dimension} labels")
        seen = np.zeros(basis.dimension, dtype=bool)
        seen[mapping] = True
        if not seen.all():
            raise ValidationError(f"{name} is not a bijection on the label space")
        if cost < 0:
            raise ValidationError(f"{name}: arithmetic cost must be nonnegative")
        self.basis = basis
        self.mapping = mapping
        self.cost = int(cost)
        self.name = name

    def inverse(self) -> "BasisPermutation":
        inv = np.empty_like(self.mapping)
        inv[self.mapping] = np.arange(self.basis.dimension)
        return BasisPermutation(self.basis, inv, self.cost, f"{self.name}^-1")


def apply_basis_permutation(state: StateVector, perm: BasisPermutation, ledger: QueryLedger) -> StateVector:
    if perm.basis != state.basis:
        raise ValidationError(f"{perm.name} was built for another basis")
    moved = np.empty_like(state.amplitudes)
    moved[perm.mapping] = state.amplitudes
    state.amplitudes = moved
    ledger.charge(arithmetic_calls=perm.cost)
    return state


def apply_cry(
    state: StateVector,
    target: int,
    angles: np.ndarray,
    ledger: QueryLedger,
    angle_cost: int = ANGLE_ARITHMETIC_COST,
) -> StateVector:
    """
    R_Y(theta(i)) = [[cos, sin], [-sin, cos]] on default bit `target`, theta read off the grid index.
    """
    basis = state.basis
    n = basis.obligor_count
    if not 0 <= target < n:
        raise ValidationError(f"obligor qubit {target} outside [0, {n})")
    angles = np.asarray(angles, dtype=float)
    if angles.shape != (basis.grid_size,):
        raise ValidationError(f"need one angle per grid point, got shape {angles.shape}")
    # y = high * 2^(k+1) + bit * 2^k + low
    blocks = state.amplitudes.reshape(basis.grid_size, 2 ** (n - target - 1), 2, 2 ** target, 2)
    c = np.cos(angles)[:, None, None, None]
    s = np.sin(angles)[:, None, None, None]
    a0 = blocks[:, :, 0].copy()
    a1 = blocks[:, :, 1].copy()
    blocks[:, :, 0] = c * a0 + s * a1
    blocks[:, :, 1] = -s * a0 + c * a1
    ledger.charge(cry_calls=1, arithmetic_calls=angle_cost)
    return state


class GridPreparation:
    """
    Real orthogonal U^SN on the grid register: the Householder reflection mapping
    e_0 onto sqrt(weights). Being an involution it is also its own inverse.
    """

    def __init__(self, weights: np.ndarray):
        weights = np.asarray(weights, dtype=float)
        if weights.ndim != 1 or len(weights) < 2:
            raise ValidationError("grid weights must be a vector of length >= 2")
        if weights.min() < 0.0:
            raise ValidationError("grid weights must be nonnegative")
        if abs(math.fsum(weights) - 1.0) > WEIGHT_TOLERANCE:
            raise ValidationError(f"grid weights sum to {math.fsum(weights)!r}, not 1")
        self.weights = weights
        self.target = np.sqrt(weights)
        u = -self.target
        u[0] += 1.0
        norm2 = float(u @ u)
        # weights already concentrated on index 0: the map is the identity
        self._u = u if norm2 > 0.0 else None
        self._scale = 2.0 / norm2 if norm2 > 0.0 else 0.0

    @property
    def size(self) -> int:
        return len(self.weights)

    def apply(self, state: StateVector, ledger: QueryLedger) -> StateVector:
        if state.basis.grid_size != self.size:
            raise ValidationError(f"grid register has {state.basis.grid_size} points, weights have {self.size}")
        ledger.charge(usn_calls=1)
        if self._u is None:
            return state
        grid = state.amplitudes.reshape(self.size, -1)
        grid -= self._scale * np.outer(self._u, self._u @ grid)
        return state


def inject_prepared_state(state: StateVector, weights: np.ndarray, ledger: QueryLedger) -> StateVector:
    """One U^SN call: |0> -> sum_i sqrt(p_i) |i, 0..0, 0>."""
    return GridPreparation(weights).apply(state, ledger)


def marked_probability(state: StateVector, flag: int = 1) -> float:
    if flag not in (0, 1):
        raise ValidationError(f"flag must be 0 or 1, got {flag}")
    return math.fsum(state.probabilities()[:, :, flag].ravel())


def conditional_distribution(state: StateVector, flag: int = 1) -> np.ndarray:
    """Born distribution over (i, y) given the flag, as an (N_SN, 2^N_obl) array."""
    mass = marked_probability(state, flag)
    if mass <= 0.0:
        raise ValidationError(f"no probability mass on flag={flag}")
    return state.probabilities()[:, :, flag] / mass


def phase_flag(state: StateVector, phase: float, flag: int = 1) -> StateVector:
    """Multiply every amplitude carrying the given flag by e^{i phase}."""
    state.view()[:, :, flag] *= np.exp(1j * phase)
    return state


def phase_zero(state: StateVector, phase: float) -> StateVector:
    """Multiply the all-zero label by e^{i phase}."""
    state.amplitudes[0] *= np.exp(1j * phase)
    return state
