import math
import os
import sys
import unittest

import numpy as np
import pytest
from scipy import integrate
from scipy.stats import norm

# Add project root to sys.path to allow importing the packages
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, project_root)

from risk_model.discretization import discretize_std_normal
from risk_model.errors import ValidationError
from risk_model.merton import (
    ERF_COEFFICIENTS,
    GroupPartition,
    Obligor,
    Portfolio,
    conditional_default_prob,
    default_prob_matrix,
    group_loss,
    loss_table,
    portfolio_loss,
    std_normal_cdf,
    std_normal_ppf,
)
from risk_model.portfolio_io import load_portfolio, portfolio_from_dict
from tests.instances import GOLDEN_PORTFOLIO_PATH


def _density_integral(x: float) -> float:
    value, _ = integrate.quad(lambda t: math.exp(-0.5 * t * t) / math.sqrt(2.0 * math.pi), -np.inf, x, epsabs=1e-14)
    return value


class TestStdNormalCdf(unittest.TestCase):

    def test_center(self):
        """Phi(0) is exactly one half."""
        self.assertEqual(std_normal_cdf(0.0), 0.5)

    def test_coefficients(self):
        self.assertEqual(
            ERF_COEFFICIENTS,
            (0.0705230784, 0.0422820123, 0.0092705272, 0.0001520143, 0.0002765672, 0.0000430638),
        )

    def test_against_numerical_integration(self):
        """The erf approximation stays within 3e-7 of the integrated density."""
        self.assertAlmostEqual(std_normal_cdf(1.959964), 0.975, delta=3e-7)
        for x in (-3.0, -1.2, -0.3, 0.7, 2.5):
            self.assertAlmostEqual(std_normal_cdf(x), _density_integral(x), delta=3e-7)

    def test_monotone_and_symmetric(self):
        xs = np.linspace(-8.0, 8.0, 10_000)
        values = std_normal_cdf(xs)
        self.assertTrue(np.all(np.diff(values) >= 0.0))
        self.assertTrue(np.all((values >= 0.0) & (values <= 1.0)))
        np.testing.assert_allclose(values + std_normal_cdf(-xs), 1.0, atol=1e-7)

    def test_ppf_inverts_cdf(self):
        for q in (0.01, 0.1, 0.5, 0.9):
            self.assertAlmostEqual(std_normal_cdf(std_normal_ppf(q)), q, delta=1e-10)
        self.assertAlmostEqual(std_normal_ppf(0.01), -2.3263, delta=1e-3)

    def test_ppf_rejects_bad_probability(self):
        with self.assertRaises(ValidationError):
            std_normal_ppf(1.5)


class TestObligorAndDefaults(unittest.TestCase):

    def test_loading_bounds(self):
        for loading in (0.0, 1.0, -0.2, 1e-12):
            with self.assertRaises(ValidationError):
                Obligor(exposure=1.0, loading=loading, threshold=0.0)

    def test_exposure_must_be_positive(self):
        with self.assertRaises(ValidationError):
            Obligor(exposure=0.0, loading=0.5, threshold=0.0)

    def test_zero_argument(self):
        obligor = Obligor(exposure=1.0, loading=0.5, threshold=0.0)
        self.assertEqual(conditional_default_prob(obligor, 0.0), 0.5)

    def test_small_loading_decouples_factor(self):
        obligor = Obligor(exposure=1.0, loading=1e-9, threshold=-1.0)
        for x0 in (-3.0, 0.0, 3.0):
            self.assertAlmostEqual(conditional_default_prob(obligor, x0), std_normal_cdf(-1.0), delta=1e-8)

    def test_stressed_factor(self):
        z = std_normal_ppf(0.01)
        obligor = Obligor(exposure=1.0, loading=0.3, threshold=z)
        expected = norm.cdf((z + 0.9) / math.sqrt(0.91))
        self.assertAlmostEqual(conditional_default_prob(obligor, -3.0), expected, delta=3e-7)

    def test_matrix_matches_scalar(self):
        portfolio = load_portfolio(GOLDEN_PORTFOLIO_PATH)
        xs = np.array([-2.0, 0.0, 1.5])
        matrix = default_prob_matrix(portfolio, xs)
        self.assertEqual(matrix.shape, (3, 3))
        for i, x in enumerate(xs):
            for k, obligor in enumerate(portfolio.obligors):
                self.assertAlmostEqual(matrix[i, k], conditional_default_prob(obligor, x), places=15)


class TestLosses(unittest.TestCase):

    def setUp(self):
        self.portfolio = load_portfolio(GOLDEN_PORTFOLIO_PATH)

    def test_portfolio_loss(self):
        self.assertEqual(portfolio_loss(self.portfolio, [0, 0, 0]), 0.0)
        self.assertEqual(portfolio_loss(self.portfolio, [1, 1, 1]), 15.0)
        self.assertEqual(portfolio_loss(self.portfolio, [1, 0, 1]), 10.0)

    def test_group_losses_sum_to_total(self):
        """Golden split: group 1 holds obligor 1, group 2 obligors 2 and 3."""
        y = [1, 0, 1]
        self.assertEqual(group_loss(self.portfolio, y, 0), 3.0)
        self.assertEqual(group_loss(self.portfolio, y, 1), 7.0)
        self.assertEqual(group_loss(self.portfolio, [1, 1, 0], 1), 5.0)
        for bits in range(8):
            y = [(bits >> k) & 1 for k in range(3)]
            total = sum(group_loss(self.portfolio, y, k) for k in range(self.portfolio.n_groups))
            self.assertEqual(total, portfolio_loss(self.portfolio, y))

    def test_group_index_out_of_range(self):
        with self.assertRaises(ValidationError):
            group_loss(self.portfolio, [1, 1, 1], 2)

    def test_default_vector_length(self):
        with self.assertRaises(ValidationError):
            portfolio_loss(self.portfolio, [1, 0])

    def test_loss_table(self):
        defaults = np.array([[1, 0, 1], [0, 1, 1]])
        losses, group_losses = loss_table(self.portfolio, defaults)
        np.testing.assert_array_equal(losses, [10.0, 12.0])
        np.testing.assert_array_equal(group_losses, [[3.0, 0.0], [7.0, 12.0]])


class TestPartition(unittest.TestCase):

    def test_offsets_are_prefix_sums(self):
        partition = GroupPartition((2, 1, 3))
        self.assertEqual(partition.offsets, (0, 2, 3))
        self.assertEqual(list(partition.group_range(2)), [3, 4, 5])
        np.testing.assert_array_equal(partition.membership().sum(axis=0), np.ones(6))

    def test_sizes_must_cover_portfolio(self):
        obligors = tuple(Obligor(1.0, 0.5, 0.0) for _ in range(3))
        with self.assertRaises(ValidationError):
            Portfolio(obligors=obligors, partition=GroupPartition((1, 1)))

    def test_invalid_sizes(self):
        with self.assertRaises(ValidationError):
            GroupPartition((2, 0))

    def test_singletons(self):
        partition = GroupPartition.singletons(4)
        self.assertEqual(partition.n_groups, 4)
        self.assertEqual(partition.n_obligors, 4)


class TestDiscretization(unittest.TestCase):

    def test_three_point_grid(self):
        disc = discretize_std_normal(3, 1.0)
        np.testing.assert_allclose(disc.points, [-1.0, 0.0, 1.0])
        expected = [norm.cdf(-0.5), norm.cdf(0.5) - norm.cdf(-0.5), 1.0 - norm.cdf(0.5)]
        np.testing.assert_allclose(disc.probs, expected, atol=1e-6)

    def test_weights_and_symmetry(self):
        disc = discretize_std_normal(16, 4.0)
        self.assertTrue(np.all(disc.probs >= 0.0))
        self.assertAlmostEqual(math.fsum(disc.probs), 1.0, delta=1e-12)
        self.assertAlmostEqual(disc.mean, 0.0, delta=1e-12)
        self.assertTrue(np.all(np.diff(disc.points) > 0.0))
        np.testing.assert_allclose(disc.points, -disc.points[::-1], atol=1e-12)

    def test_variance_converges(self):
        self.assertAlmostEqual(discretize_std_normal(256, 6.0).variance, 1.0, delta=1e-3)
        coarse = abs(discretize_std_normal(16, 4.0).variance - 1.0)
        fine = abs(discretize_std_normal(64, 6.0).variance - 1.0)
        self.assertLess(fine, coarse)

    def test_rejects_bad_grid(self):
        with self.assertRaises(ValidationError):
            discretize_std_normal(1, 4.0)
        with self.assertRaises(ValidationError):
            discretize_std_normal(16, 0.0)


def test_portfolio_document_with_thresholds_and_default_groups():
    doc = {"obligors": [{"exposure": 2, "threshold": -1.5, "loading": 0.4}, {"exposure": 4, "pd": 0.5, "loading": 0.4}]}
    portfolio = portfolio_from_dict(doc)
    assert portfolio.partition.sizes == (1, 1)
    assert portfolio.obligors[0].threshold == -1.5
    assert abs(portfolio.obligors[1].threshold) < 1e-9


def test_portfolio_document_errors(tmp_path):
    with pytest.raises(ValidationError):
        portfolio_from_dict({"obligors": [{"exposure": 1, "loading": 0.5}]})
    with pytest.raises(ValidationError):
        portfolio_from_dict({"obligors": []})
    with pytest.raises(FileNotFoundError):
        load_portfolio(tmp_path / "missing.json")
    broken = tmp_path / "broken.json"
    broken.write_text("{not json", encoding="utf-8")
    with pytest.raises(ValidationError):
        load_portfolio(broken)


if __name__ == '__main__':
    unittest.main()
