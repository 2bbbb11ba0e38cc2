import os
import sys

import numpy as np

project_root = os.path.abspath(os.path.join(os.path.dirname(__file__), '..'))
sys.path.insert(0, project_root)

from risk_model.discretization import discretize_std_normal
from risk_model.merton import GroupPartition, Obligor, Portfolio
from risk_model.portfolio_io import load_portfolio

DATA_DIR = os.path.join(os.path.dirname(__file__), "data")
GOLDEN_PORTFOLIO_PATH = os.path.join(DATA_DIR, "golden_portfolio.json")
GOLDEN_REPORT_PATH = os.path.join(DATA_DIR, "golden_report.txt")
GOLDEN_THRESHOLD = 7.0


def golden_portfolio(groups=(1, 2)) -> Portfolio:
    """e = (3, 5, 7), pd = (0.1, 0.2, 0.3), a = 0.5."""
    portfolio = load_portfolio(GOLDEN_PORTFOLIO_PATH)
    return portfolio.with_partition(GroupPartition(tuple(groups)))


def golden_disc():
    return discretize_std_normal(16, 4.0)


def random_portfolio(rng: np.random.Generator, n_obligors: int | None = None, max_obligors: int = 8) -> Portfolio:
    """Integer exposures in [1, 10], pd in [0.01, 0.3], loadings in [0.1, 0.8], random contiguous groups."""
    n = int(n_obligors or rng.integers(2, max_obligors + 1))
    obligors = tuple(
        Obligor.from_pd(float(rng.integers(1, 11)), float(rng.uniform(0.01, 0.3)), float(rng.uniform(0.1, 0.8)))
        for _ in range(n)
    )
    n_groups = int(rng.integers(1, n + 1))
    cuts = np.sort(rng.choice(np.arange(1, n), size=n_groups - 1, replace=False)) if n_groups > 1 else []
    bounds = [0, *cuts, n]
    sizes = tuple(int(b - a) for a, b in zip(bounds[:-1], bounds[1:]))
    return Portfolio(obligors=obligors, partition=GroupPartition(sizes))


def tail_threshold(portfolio: Portfolio, quantile: float = 0.7) -> float:
    """A support point of L with positive tail mass: the given fraction of the total exposure, rounded down to a loss."""
    exposures = portfolio.exposures
    patterns = (np.arange(2 ** len(exposures))[:, None] >> np.arange(len(exposures))) & 1
    losses = np.unique(patterns @ exposures)
    positive = losses[losses > 0]
    return float(positive[min(len(positive) - 1, int(quantile * len(positive)))])
