import math
import os
import sys
import unittest

import numpy as np
import pytest

# Add project root to sys.path to allow importing the packages
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, project_root)

from qsim.ledger import QueryLedger
from qsim.oracles import rotation_angles
from qsim.statevector import (
    BasisPermutation,
    GridPreparation,
    ScenarioBasis,
    StateVector,
    apply_basis_permutation,
    apply_cry,
    conditional_distribution,
    inject_prepared_state,
    marked_probability,
    phase_flag,
    phase_zero,
    zero_state,
)
from risk_model.errors import GuardExceededError, ValidationError
from risk_model.merton import default_prob_matrix
from tests.instances import golden_disc, golden_portfolio


def random_state(basis: ScenarioBasis, seed: int = 0) -> StateVector:
    rng = np.random.default_rng(seed)
    amplitudes = rng.normal(size=basis.dimension) + 1j * rng.normal(size=basis.dimension)
    return StateVector(basis, amplitudes / np.linalg.norm(amplitudes))


class TestScenarioBasis(unittest.TestCase):

    def test_index_layout(self):
        basis = ScenarioBasis(grid_size=4, obligor_count=3)
        self.assertEqual(basis.dimension, 64)
        self.assertEqual(basis.index(2, 5, 1), (2 << 4) | (5 << 1) | 1)
        for idx in (0, 17, 63):
            self.assertEqual(basis.index(*basis.label(idx)), idx)
        with self.assertRaises(ValidationError):
            basis.index(4, 0, 0)

    def test_dense_guard(self):
        with self.assertRaises(GuardExceededError):
            ScenarioBasis(grid_size=16, obligor_count=21)

    def test_zero_state(self):
        state = zero_state(ScenarioBasis(4, 2))
        self.assertEqual(state.norm(), 1.0)
        self.assertEqual(state.probabilities()[0, 0, 0], 1.0)

    def test_check_norm(self):
        basis = ScenarioBasis(2, 1)
        state = StateVector(basis, np.full(basis.dimension, 1.0))
        with self.assertRaises(GuardExceededError):
            state.check_norm()

    def test_snapshot_labels(self):
        basis = ScenarioBasis(2, 2)
        amplitudes = np.zeros(basis.dimension)
        amplitudes[basis.index(1, 1, 1)] = 1.0
        frame = StateVector(basis, amplitudes).to_frame()
        self.assertEqual(list(frame["label"]), ["1:10:1"])
        self.assertEqual(float(frame["re"].iloc[0]), 1.0)


class TestBasisPermutation(unittest.TestCase):

    def setUp(self):
        self.basis = ScenarioBasis(4, 2)

    def test_rejects_non_bijection(self):
        mapping = np.zeros(self.basis.dimension, dtype=np.int64)
        with self.assertRaises(ValidationError):
            BasisPermutation(self.basis, mapping, cost=1)

    def test_preserves_norm_and_charges_cost(self):
        rng = np.random.default_rng(3)
        perm = BasisPermutation(self.basis, rng.permutation(self.basis.dimension), cost=5, name="shuffle")
        state = random_state(self.basis)
        before = state.copy()
        ledger = QueryLedger()
        apply_basis_permutation(state, perm, ledger)
        self.assertAlmostEqual(state.norm(), 1.0, delta=1e-12)
        self.assertEqual(ledger.arithmetic_calls, 5)
        apply_basis_permutation(state, perm.inverse(), ledger)
        np.testing.assert_array_equal(state.amplitudes, before.amplitudes)

    def test_identity_mapping(self):
        perm = BasisPermutation(self.basis, np.arange(self.basis.dimension), cost=0)
        state = random_state(self.basis, 1)
        before = state.amplitudes.copy()
        apply_basis_permutation(state, perm, QueryLedger())
        np.testing.assert_array_equal(state.amplitudes, before)


class TestGridPreparation(unittest.TestCase):

    def setUp(self):
        self.disc = golden_disc()
        self.basis = ScenarioBasis(self.disc.count, 3)

    def test_loads_cell_probabilities(self):
        ledger = QueryLedger()
        state = inject_prepared_state(zero_state(self.basis), self.disc.probs, ledger)
        grid = state.probabilities().sum(axis=(1, 2))
        np.testing.assert_allclose(grid, self.disc.probs, atol=1e-12)
        self.assertAlmostEqual(math.fsum(grid * self.disc.points), 0.0, delta=1e-12)
        self.assertEqual(ledger.usn_calls, 1)
        self.assertAlmostEqual(state.norm(), 1.0, delta=1e-12)

    def test_self_inverse(self):
        prep = GridPreparation(self.disc.probs)
        state = random_state(self.basis, 2)
        before = state.amplitudes.copy()
        prep.apply(state, QueryLedger())
        prep.apply(state, QueryLedger())
        np.testing.assert_allclose(state.amplitudes, before, atol=1e-12)

    def test_point_mass_is_identity(self):
        weights = np.zeros(self.disc.count)
        weights[0] = 1.0
        state = random_state(self.basis, 4)
        before = state.amplitudes.copy()
        GridPreparation(weights).apply(state, QueryLedger())
        np.testing.assert_array_equal(state.amplitudes, before)

    def test_rejects_unnormalised_weights(self):
        with self.assertRaises(ValidationError):
            GridPreparation(np.full(4, 0.3))
        with self.assertRaises(ValidationError):
            GridPreparation(np.array([1.2, -0.2]))


class TestControlledRotation(unittest.TestCase):

    def setUp(self):
        self.portfolio = golden_portfolio()
        self.disc = golden_disc()
        self.basis = ScenarioBasis(self.disc.count, self.portfolio.n_obligors)
        self.angles = rotation_angles(self.portfolio, self.disc)
        self.pdef = default_prob_matrix(self.portfolio, self.disc.points)

    def test_loads_default_probability(self):
        for k in range(self.portfolio.n_obligors):
            state = inject_prepared_state(zero_state(self.basis), self.disc.probs, QueryLedger())
            ledger = QueryLedger()
            apply_cry(state, k, self.angles[:, k], ledger)
            probs = state.probabilities()
            defaulted = probs[:, 1 << k, 0] / self.disc.probs
            np.testing.assert_allclose(defaulted, self.pdef[:, k], atol=1e-12)
            self.assertEqual(ledger.cry_calls, 1)

    def test_block_unitarity_and_inverse(self):
        state = random_state(self.basis, 5)
        before = state.copy()
        block_norms = np.linalg.norm(before.view(), axis=1)
        apply_cry(state, 1, self.angles[:, 1], QueryLedger())
        np.testing.assert_allclose(np.linalg.norm(state.view(), axis=1), block_norms, atol=1e-12)
        apply_cry(state, 1, -self.angles[:, 1], QueryLedger())
        np.testing.assert_allclose(state.amplitudes, before.amplitudes, atol=1e-12)

    def test_rejects_bad_target(self):
        with self.assertRaises(ValidationError):
            apply_cry(zero_state(self.basis), 3, self.angles[:, 0], QueryLedger())


class TestFlagQueries(unittest.TestCase):

    def setUp(self):
        self.basis = ScenarioBasis(4, 2)

    def test_complement(self):
        state = random_state(self.basis, 6)
        self.assertAlmostEqual(
            marked_probability(state, 1), 1.0 - marked_probability(state, 0), delta=1e-12
        )

    def test_conditional_distribution(self):
        state = random_state(self.basis, 7)
        dist = conditional_distribution(state, 1)
        self.assertEqual(dist.shape, (4, 4))
        self.assertAlmostEqual(math.fsum(dist.ravel()), 1.0, delta=1e-12)
        with self.assertRaises(ValidationError):
            conditional_distribution(zero_state(self.basis), 1)

    def test_phases_keep_norm(self):
        state = random_state(self.basis, 8)
        phase_flag(state, 0.7, flag=1)
        phase_zero(state, -1.3)
        self.assertAlmostEqual(state.norm(), 1.0, delta=1e-12)


@pytest.mark.parametrize("flag", [2, -1])
def test_marked_probability_rejects_bad_flag(flag):
    with pytest.raises(ValidationError):
        marked_probability(zero_state(ScenarioBasis(2, 1)), flag)


def test_ledger_counters():
    ledger = QueryLedger()
    ledger.charge(usn_calls=2, arithmetic_calls=3)
    earlier = ledger.snapshot()
    ledger.absorb(QueryLedger(cry_calls=1, usn_calls=1), times=4)
    delta = ledger.since(earlier)
    assert delta.cry_calls == 4 and delta.usn_calls == 4 and delta.arithmetic_calls == 0
    with pytest.raises(ValidationError):
        ledger.charge(unknown_calls=1)
    with pytest.raises(ValidationError):
        ledger.charge(usn_calls=-1)
