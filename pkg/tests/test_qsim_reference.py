"""
Explicit-register reference for U>=v on small portfolios.

The reference keeps the loss accumulator and the comparison result as real
registers (compute, use, uncompute) in a sparse dictionary of basis states,
then checks that the accumulator returns to zero and that the amplitudes agree
with the reduced-basis path that folds all arithmetic into one permutation.
"""
import math
import os
import sys
from collections import defaultdict

import numpy as np
import pytest

# Add project root to sys.path to allow importing the packages
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, project_root)

from qsim.fixed_point import DEFAULT_FORMAT
from qsim.ledger import QueryLedger
from qsim.oracles import TailOracleSpec, build_u_gev, rotation_angles
from tests.instances import GOLDEN_THRESHOLD, golden_disc, golden_portfolio, random_portfolio, tail_threshold

# register layout of a reference basis state: (grid index, default bits, accumulator, flag)
TOLERANCE = 1e-10


def householder(weights):
    target = np.sqrt(weights)
    u = -target
    u[0] += 1.0
    return np.eye(len(weights)) - 2.0 * np.outer(u, u) / (u @ u)


def prune(state):
    return {label: amp for label, amp in state.items() if abs(amp) > 1e-300}


def load_grid(state, matrix):
    out = defaultdict(complex)
    for (i, y, acc, w), amp in state.items():
        for j in range(matrix.shape[0]):
            out[(j, y, acc, w)] += matrix[j, i] * amp
    return prune(out)


def rotate(state, k, angles):
    out = defaultdict(complex)
    for (i, y, acc, w), amp in state.items():
        c, s = math.cos(angles[i]), math.sin(angles[i])
        bit = (y >> k) & 1
        zero, one = y & ~(1 << k), y | (1 << k)
        if bit == 0:
            out[(i, zero, acc, w)] += c * amp
            out[(i, one, acc, w)] += -s * amp
        else:
            out[(i, zero, acc, w)] += s * amp
            out[(i, one, acc, w)] += c * amp
    return prune(out)


def accumulate(state, raw_exposures, sign):
    out = {}
    for (i, y, acc, w), amp in state.items():
        for k, raw in enumerate(raw_exposures):
            if (y >> k) & 1:
                acc += sign * raw
        out[(i, y, acc, w)] = amp
    return out


def compare(state, raw_threshold):
    return {(i, y, acc, w ^ int(acc >= raw_threshold)): amp for (i, y, acc, w), amp in state.items()}


def reference_u_gev(portfolio, disc, v, fmt=DEFAULT_FORMAT):
    raw_exposures = [fmt.to_raw(e) for e in portfolio.exposures]
    angles = rotation_angles(portfolio, disc)
    state = {(0, 0, 0, 0): 1.0 + 0.0j}
    state = load_grid(state, householder(disc.probs))
    for k in range(portfolio.n_obligors):
        state = rotate(state, k, angles[:, k])
    state = accumulate(state, raw_exposures, +1)
    state = compare(state, fmt.to_raw(v))
    state = accumulate(state, raw_exposures, -1)
    return state


def to_dense(state, grid_size, n_obligors):
    amplitudes = np.zeros(grid_size * 2 ** (n_obligors + 1), dtype=complex)
    for (i, y, acc, w), amp in state.items():
        assert acc == 0, f"accumulator left at {acc} for label {(i, y, w)}"
        amplitudes[(i << (n_obligors + 1)) | (y << 1) | w] += amp
    return amplitudes


def test_golden_instance_matches_reference():
    portfolio, disc = golden_portfolio(), golden_disc()
    reduced = build_u_gev(TailOracleSpec(portfolio, disc, GOLDEN_THRESHOLD)).prepare(QueryLedger())
    reference = to_dense(reference_u_gev(portfolio, disc, GOLDEN_THRESHOLD), disc.count, portfolio.n_obligors)
    np.testing.assert_allclose(reduced.amplitudes, reference, atol=TOLERANCE)


@pytest.mark.parametrize("seed", range(4))
def test_small_random_portfolios_match_reference(seed):
    rng = np.random.default_rng(200 + seed)
    portfolio = random_portfolio(rng, n_obligors=int(rng.integers(1, 5)))
    disc = golden_disc()
    v = tail_threshold(portfolio)
    reduced = build_u_gev(TailOracleSpec(portfolio, disc, v)).prepare(QueryLedger())
    reference = to_dense(reference_u_gev(portfolio, disc, v), disc.count, portfolio.n_obligors)
    np.testing.assert_allclose(reduced.amplitudes, reference, atol=TOLERANCE)
