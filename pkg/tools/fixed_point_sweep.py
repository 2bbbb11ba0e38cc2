import sys
from pathlib import Path

import numpy as np
import pandas as pd

project_root = Path(__file__).resolve().parent.parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

from qsim.fixed_point import FixedPointFormat
from qsim.ledger import QueryLedger
from qsim.oracles import TailOracleSpec, build_u_gev
from risk_model.discretization import discretize_std_normal
from risk_model.exact import scenario_law
from risk_model.portfolio_io import FLOAT_FORMAT, load_portfolio

PORTFOLIO_PATH = project_root / "tests" / "data" / "golden_portfolio.json"
OUTPUT_PATH = project_root / "reports" / "fixed_point_sweep.csv"
THRESHOLD = 7.0
# integer part kept at 8 bits including sign
INTEGER_BITS = 8
WIDTHS = (16, 24, 32)


def sweep_row(portfolio, disc, exact_probs: np.ndarray, total_bits: int) -> dict:
    fmt = FixedPointFormat(total_bits=total_bits, fraction_bits=total_bits - INTEGER_BITS)
    spec = TailOracleSpec(portfolio, disc, THRESHOLD, format=fmt, quantize_angles=True)
    oracle = build_u_gev(spec)
    state = oracle.prepare(QueryLedger())
    label_probs = state.probabilities().sum(axis=2)
    return {
        "total_bits": total_bits,
        "fraction_bits": fmt.fraction_bits,
        "resolution": fmt.resolution,
        "max_abs_error": float(np.max(np.abs(label_probs - exact_probs))),
        "tail_probability": oracle.tail_probability,
    }


def run_sweep(widths=WIDTHS) -> pd.DataFrame:
    portfolio = load_portfolio(PORTFOLIO_PATH)
    disc = discretize_std_normal(16, 4.0)
    exact_probs = scenario_law(portfolio, disc).weights
    return pd.DataFrame([sweep_row(portfolio, disc, exact_probs, bits) for bits in widths])


if __name__ == "__main__":
    print(f"Sweeping fixed-point widths {WIDTHS} on {PORTFOLIO_PATH.name}...")
    table = run_sweep()
    for _, row in table.iterrows():
        print(f"  {int(row['total_bits'])} bits: max error {row['max_abs_error']:.3e}")
    OUTPUT_PATH.parent.mkdir(parents=True, exist_ok=True)
    table.to_csv(OUTPUT_PATH, index=False, float_format=FLOAT_FORMAT)
    print(f"Saved as: {OUTPUT_PATH}")
