import os
import sys
from pathlib import Path

project_root = Path(__file__).resolve().parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from risk_model.discretization import discretize_std_normal
from risk_model.exact import RiskReport, enumerate_exact
from risk_model.merton import GroupPartition, Portfolio
from risk_model.portfolio_io import load_portfolio, write_key_values

GOLDEN_PORTFOLIO = project_root / "tests" / "data" / "golden_portfolio.json"
GOLDEN_REPORT = project_root / "tests" / "data" / "golden_report.txt"
GOLDEN_N_SN = 16
GOLDEN_HALFWIDTH = 4.0
GOLDEN_THRESHOLD = 7.0


def golden_report(portfolio: Portfolio) -> RiskReport:
    return enumerate_exact(portfolio, discretize_std_normal(GOLDEN_N_SN, GOLDEN_HALFWIDTH), v=GOLDEN_THRESHOLD)


def singleton_report(portfolio: Portfolio) -> RiskReport:
    # per-obligor contributions of the same instance
    singletons = portfolio.with_partition(GroupPartition.singletons(portfolio.n_obligors))
    return golden_report(singletons)


def freeze(out_path: str | os.PathLike = GOLDEN_REPORT) -> dict:
    portfolio = load_portfolio(GOLDEN_PORTFOLIO)
    doc = golden_report(portfolio).to_dict()
    for k, value in enumerate(singleton_report(portfolio).cvar_contribs, start=1):
        doc[f"obligor_contrib_{k}"] = value
    os.makedirs(os.path.dirname(out_path), exist_ok=True)
    write_key_values(doc, out_path)
    return doc


if __name__ == "__main__":
    print(f"Enumerating golden instance from {GOLDEN_PORTFOLIO}...")
    frozen = freeze()
    print(f"{len(frozen)} values frozen.")
    print(f"Saved as: {GOLDEN_REPORT}")
