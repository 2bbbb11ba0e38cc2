import argparse
import logging
import sys
from pathlib import Path

# Add project root to sys.path to allow importing the packages when run from elsewhere
project_root = Path(__file__).resolve().parent
if str(project_root) not in sys.path:
    sys.path.insert(0, str(project_root))

try:
    from pipeline.runner import COMMANDS, RunConfig, default_seed, run_pipeline, write_reports
    from risk_model.errors import GuardExceededError, StatisticalAcceptanceError, ValidationError
except ModuleNotFoundError as e:
    print(f"Failed to import modules: {e}")
    print("Please ensure that the script is run from the project root directory")
    print("and all packages (risk_model, classical_mc, qsim, estimation, complexity, pipeline) are present.")
    sys.exit(1)

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_GUARD = 3
EXIT_ACCEPTANCE = 4


def _add_common(parser: argparse.ArgumentParser, seed_default: int):
    parser.add_argument("-p", "--portfolio", dest="portfolio_path", type=str, help="Portfolio JSON document.")
    parser.add_argument("-a", "--alpha", type=float, help="VaR level alpha; v defaults to V_alpha.")
    parser.add_argument("-v", "--threshold", dest="v", type=float, help="CVaR threshold v.")
    parser.add_argument("--n_sn", type=int, default=16, help="Grid points of the discretised factor. Default: 16")
    parser.add_argument("--halfwidth", type=float, default=4.0, help="Grid half width D. Default: 4.0")
    parser.add_argument("--seed", type=int, default=seed_default, help="Seed. Default: $CVAR_QSIM_SEED or 0")
    parser.add_argument("--eps", type=float, default=0.1, help="Target accuracy epsilon. Default: 0.1")
    parser.add_argument("--delta", type=float, default=0.05, help="Failure probability delta. Default: 0.05")
    parser.add_argument("--workers", type=int, default=1, help="Worker threads for batches and groups.")
    parser.add_argument("-o", "--output_dir", type=str, default="reports", help="Report directory. Default: reports")
    parser.add_argument("--verbose", action="store_true", help="Log at DEBUG level.")


def _add_mc(parser: argparse.ArgumentParser):
    parser.add_argument("-n", "--samples", type=int, default=100_000, help="Monte Carlo scenarios. Default: 100000")
    parser.add_argument("--batch", type=int, default=65_536, help="Scenarios per seeded batch.")
    parser.add_argument(
        "--factor_mode",
        choices=("normal", "inverse-cdf", "discrete"),
        default="discrete",
        help="How X_0 is drawn; 'discrete' matches the exact oracle's grid. Default: discrete",
    )


def _add_qsim(parser: argparse.ArgumentParser):
    parser.add_argument(
        "--estimator", choices=("exact", "surrogate", "per-group-ae"), default="exact", help="Estimator mode."
    )
    parser.add_argument("--total_bits", type=int, default=32, help="Fixed-point width N_dig. Default: 32")
    parser.add_argument("--fraction_bits", type=int, default=24, help="Fixed-point fraction bits. Default: 24")
    parser.add_argument("--quantize_angles", action="store_true", help="Round rotation angles to the fixed-point grid.")
    parser.add_argument("--p_bound", type=float, help="Lower bound w on p; default is the exact p.")
    parser.add_argument("--shots", type=int, default=100, help="Shots per Grover power (per-group-ae).")
    parser.add_argument("--perturbation", choices=("uniform", "gaussian"), default="uniform")
    parser.add_argument("--polylog", default="n-log2n-log2d", help="Estimator call-count convention.")


def _add_budget(parser: argparse.ArgumentParser):
    parser.add_argument("--tail_prob", dest="p", type=float, help="Tail probability p.")
    parser.add_argument("--sigma_max", type=float)
    parser.add_argument("--c_max", type=float)
    parser.add_argument("--e_max", type=float)
    parser.add_argument("--n_gr", type=int)
    parser.add_argument("--n_obl", type=int)
    parser.add_argument("--regime", action="store_true", help="Use the typical-obligor substitution.")
    parser.add_argument("--pbar_def", type=float, help="Typical conditional default probability.")
    parser.add_argument("--ebar", type=float, help="Typical exposure.")
    parser.add_argument("--eps_over_cmax", type=float, help="eps / C_max, e.g. 0.01.")
    parser.add_argument("--advantage_threshold", type=float, default=10.0, help="Ratio read as '>>'. Default: 10")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Exact, Monte Carlo and simulated quantum CVaR risk contributions for credit portfolios."
    )
    sub = parser.add_subparsers(dest="command", required=True)
    seed_default = default_seed()
    helps = {
        "exact": "Brute-force VaR, CVaR and contributions on the discretised law.",
        "mc": "Classical Monte Carlo estimates with sample accounting.",
        "qsim": "Simulated U>=v, fixed-point amplification and contribution estimation.",
        "budget": "Closed-form query budgets and the advantage condition.",
        "report": "exact, mc and qsim on one config with acceptance checks.",
    }
    for command in COMMANDS:
        p = sub.add_parser(command, help=helps[command])
        _add_common(p, seed_default)
        if command in ("mc", "report"):
            _add_mc(p)
        if command in ("qsim", "report"):
            _add_qsim(p)
        if command == "budget":
            _add_budget(p)
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    fields = set(RunConfig.__dataclass_fields__)
    return RunConfig(**{k: v for k, v in vars(args).items() if k in fields and v is not None})


def main(argv=None) -> int:
    try:
        parser = build_parser()
    except ValidationError as e:
        print(f"Invalid input: {e}")
        return EXIT_VALIDATION
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        config = config_from_args(args)
        print(f"Starting '{config.command}' run:")
        print(f"  Portfolio: {config.portfolio_path or 'N/A (explicit budget inputs)'}")
        print(f"  Seed: {config.seed}")
        result = run_pipeline(config)
        written = write_reports(result, args.output_dir)
        for path in written:
            print(f"  Wrote {path}")
        if result.failures:
            raise StatisticalAcceptanceError("; ".join(result.failures))
    except StatisticalAcceptanceError as e:
        print(f"Acceptance check failed: {e}")
        return EXIT_ACCEPTANCE
    except GuardExceededError as e:
        print(f"Guard exceeded: {e}")
        return EXIT_GUARD
    except (ValidationError, FileNotFoundError) as e:
        print(f"Invalid input: {e}")
        return EXIT_VALIDATION
    print(f"'{config.command}' run complete.")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
