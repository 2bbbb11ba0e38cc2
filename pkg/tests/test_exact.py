import itertools
import math
import os
import sys
import unittest

import numpy as np
import pytest

# Add project root to sys.path to allow importing the packages
project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, project_root)

from risk_model.errors import GuardExceededError, ValidationError, ZeroTailError
from risk_model.exact import (
    default_patterns,
    enumerate_exact,
    loss_distribution,
    scenario_law,
    tail_constants,
    value_at_risk,
)
from risk_model.merton import GroupPartition, Obligor, Portfolio, conditional_default_prob
from tests.instances import GOLDEN_THRESHOLD, golden_disc, golden_portfolio, random_portfolio


def brute_force_contributions(portfolio, disc, v):
    """Plain loops over (i, y): tail probability, C_v and the group contributions."""
    tail_mass = 0.0
    tail_loss = 0.0
    group_sums = [0.0] * portfolio.n_groups
    for i, x in enumerate(disc.points):
        pdef = [conditional_default_prob(o, x) for o in portfolio.obligors]
        for y in itertools.product((0, 1), repeat=portfolio.n_obligors):
            weight = disc.probs[i]
            for bit, prob in zip(y, pdef):
                weight *= prob if bit else 1.0 - prob
            loss = sum(e for e, bit in zip(portfolio.exposures, y) if bit)
            if loss >= v:
                tail_mass += weight
                tail_loss += weight * loss
                for k in range(portfolio.n_groups):
                    group_sums[k] += weight * sum(
                        portfolio.exposures[j] for j in portfolio.partition.group_range(k) if y[j]
                    )
    return tail_mass, tail_loss / tail_mass, [g / tail_mass for g in group_sums]


class TestGoldenInstance(unittest.TestCase):

    def setUp(self):
        self.portfolio = golden_portfolio()
        self.disc = golden_disc()
        self.report = enumerate_exact(self.portfolio, self.disc, v=GOLDEN_THRESHOLD)

    def test_matches_independent_enumeration(self):
        p, cvar, contribs = brute_force_contributions(self.portfolio, self.disc, GOLDEN_THRESHOLD)
        self.assertAlmostEqual(self.report.tail_prob, p, delta=1e-12)
        self.assertAlmostEqual(self.report.cvar, cvar, delta=1e-10)
        np.testing.assert_allclose(self.report.cvar_contribs, contribs, atol=1e-10)

    def test_report_invariants(self):
        report = self.report
        self.assertTrue(0.0 < report.tail_prob <= 1.0)
        self.assertAlmostEqual(sum(report.cvar_contribs), report.cvar, delta=1e-9 * report.cvar)
        for contrib, exposure in zip(report.cvar_contribs, report.group_exposures):
            self.assertTrue(0.0 <= contrib <= exposure)
        self.assertEqual(report.group_exposures, (3.0, 12.0))
        self.assertGreaterEqual(report.cvar, GOLDEN_THRESHOLD)

    def test_tail_constants(self):
        constants = tail_constants(self.report)
        self.assertEqual(constants["e_max"], 12.0)
        self.assertEqual(constants["c_max"], max(self.report.cvar_contribs))
        self.assertEqual(constants["sigma_max"], max(self.report.cvar_sigmas))
        self.assertGreater(constants["sigma_max"], 0.0)

    def test_report_views(self):
        doc = self.report.to_dict()
        self.assertIn("cvar_contrib_1", doc)
        self.assertIn("cvar_contrib_2", doc)
        self.assertNotIn("cvar_contrib_3", doc)
        frame = self.report.to_frame()
        self.assertEqual(list(frame["group"]), [1, 2])

    def test_singletons_split_the_same_cvar(self):
        singles = enumerate_exact(
            self.portfolio.with_partition(GroupPartition.singletons(3)), self.disc, v=GOLDEN_THRESHOLD
        )
        self.assertAlmostEqual(singles.cvar, self.report.cvar, delta=1e-12)
        self.assertAlmostEqual(singles.cvar_contribs[0], self.report.cvar_contribs[0], delta=1e-12)
        self.assertAlmostEqual(
            singles.cvar_contribs[1] + singles.cvar_contribs[2], self.report.cvar_contribs[1], delta=1e-10
        )


class TestValueAtRisk(unittest.TestCase):

    def setUp(self):
        self.portfolio = golden_portfolio()
        self.law = scenario_law(self.portfolio, golden_disc())

    def test_infimum_rule(self):
        support, pmf = loss_distribution(self.law)
        for alpha in (0.01, 0.05, 0.2, 0.5):
            var = value_at_risk(self.law, alpha)
            idx = int(np.nonzero(support == var)[0][0])
            self.assertLessEqual(math.fsum(pmf[idx + 1:]), alpha)
            if idx > 0:
                self.assertGreater(math.fsum(pmf[idx:]), alpha)

    def test_alpha_only_uses_var_as_threshold(self):
        report = enumerate_exact(self.portfolio, golden_disc(), alpha=0.05)
        self.assertEqual(report.cvar_threshold, report.var)
        self.assertAlmostEqual(sum(report.var_contribs), report.var, delta=1e-9 * max(report.var, 1.0))

    def test_alpha_domain(self):
        with self.assertRaises(ValidationError):
            value_at_risk(self.law, 1.0)


class TestEdgeCases(unittest.TestCase):

    def test_needs_alpha_or_threshold(self):
        with self.assertRaises(ValidationError):
            enumerate_exact(golden_portfolio(), golden_disc())

    def test_threshold_above_total_exposure(self):
        with self.assertRaises(ZeroTailError):
            enumerate_exact(golden_portfolio(), golden_disc(), v=15.5)

    def test_zero_threshold_gives_unconditional_means(self):
        portfolio = golden_portfolio()
        disc = golden_disc()
        law = scenario_law(portfolio, disc)
        report = enumerate_exact(portfolio, disc, v=0.0)
        self.assertAlmostEqual(report.tail_prob, 1.0, delta=1e-12)
        expected = (law.group_losses * law.pattern_probs).sum(axis=1)
        np.testing.assert_allclose(report.cvar_contribs, expected, atol=1e-12)

    def test_state_guard(self):
        obligors = tuple(Obligor(1.0, 0.5, -1.0) for _ in range(21))
        portfolio = Portfolio(obligors=obligors, partition=GroupPartition((21,)))
        with self.assertRaises(GuardExceededError):
            scenario_law(portfolio, golden_disc())

    def test_patterns_put_obligor_k_on_bit_k(self):
        patterns = default_patterns(3)
        self.assertEqual(patterns.shape, (8, 3))
        np.testing.assert_array_equal(patterns[5], [1, 0, 1])


@pytest.mark.parametrize("seed", range(25))
def test_allocation_identities_on_random_portfolios(seed):
    rng = np.random.default_rng(seed)
    portfolio = random_portfolio(rng)
    report = enumerate_exact(portfolio, golden_disc(), alpha=0.05)
    assert abs(sum(report.cvar_contribs) - report.cvar) <= 1e-9 * report.cvar
    assert abs(sum(report.var_contribs) - report.var) <= 1e-9 * max(report.var, 1.0)
    assert 0.0 < report.tail_prob <= 1.0


if __name__ == '__main__':
    unittest.main()
