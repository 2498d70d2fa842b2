"""
Command-line surface: `gplfm simulate | identify | predict | prior-sensitivity | silverbox`.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.
"""

import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from gplfm.config import Config, RunConfig
from gplfm.errors import GplfmError, UsageError
from gplfm.pipeline import (
    run_identify,
    run_predict,
    run_prior_sensitivity,
    run_silverbox,
    run_simulate,
)

LOGGER = logging.getLogger(__name__)


class _Parser(argparse.ArgumentParser):
    """Argument errors are usage errors (exit 1), not argparse's exit 2."""

    def error(self, message: str):
        raise UsageError(f"{self.prog}: {message}")


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="YAML file merged over the package defaults")
    parser.add_argument("--case", help="named preset from the configuration, e.g. duffing")
    parser.add_argument(
        "--set",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override any configuration key; repeatable",
    )
    parser.add_argument("--seed", type=int, help="random seed (mandatory)")
    parser.add_argument("--output-dir", type=Path)


def _add_identify_options(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--data", type=Path, help="input CSV")
    parser.add_argument("--n-accept", type=int)
    parser.add_argument("--burn-in", type=int)
    parser.add_argument(
        "--full-budget",
        action="store_true",
        help="use the long MCMC budget (mcmc.full_n_accept / mcmc.full_burn_in)",
    )
    parser.add_argument("--no-cache", action="store_true", help="do not read or store the cache")
    parser.add_argument("--clear-cache", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="gplfm", description="GP latent force model identification of SDOF oscillators"
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    simulate = commands.add_parser("simulate", help="simulate a polynomial oscillator dataset")
    _add_common(simulate)
    simulate.add_argument("--output", type=Path, help="dataset CSV (default: data.path)")
    simulate.set_defaults(handler=_simulate)

    identify = commands.add_parser("identify", help="run the identification pipeline")
    _add_common(identify)
    _add_identify_options(identify)
    identify.set_defaults(handler=_identify)

    predict = commands.add_parser("predict", help="simulate a fitted model under an excitation")
    predict.add_argument("--model", type=Path, required=True, help="fitted_model.json")
    predict.add_argument("--excitation", type=Path, required=True, help="CSV with u (and truth)")
    predict.add_argument("--output-dir", type=Path, default=Path("runs/predict"))
    predict.add_argument("--z0", type=float, default=0.0)
    predict.add_argument("--zdot0", type=float, default=0.0)
    predict.add_argument("--fs", type=float, help="sample rate when the CSV has no t column")
    predict.add_argument("--truth-column", default="y")
    predict.add_argument("--upsample", type=int, default=1)
    predict.add_argument("--psd-segment", type=int, default=1024)
    predict.add_argument("--linear", action="store_true", help="drop the nonlinear terms")
    predict.set_defaults(handler=_predict)

    sensitivity = commands.add_parser(
        "prior-sensitivity", help="repeat identification under perturbed prior means"
    )
    _add_common(sensitivity)
    _add_identify_options(sensitivity)
    sensitivity.add_argument("--n-priors", type=int, default=5)
    sensitivity.set_defaults(handler=_prior_sensitivity)

    silverbox = commands.add_parser("silverbox", help="Silverbox train/test pipeline")
    _add_common(silverbox)
    _add_identify_options(silverbox)
    silverbox.set_defaults(handler=_silverbox, default_case="silverbox")
    return parser


def _run_config(args: argparse.Namespace) -> RunConfig:
    if getattr(args, "seed", None) is None:
        raise UsageError(f"'{args.command}' is stochastic; --seed is mandatory")
    config = Config()
    if args.config is not None:
        if not args.config.exists():
            raise UsageError(f"config file not found: {args.config}")
        config.load_config(args.config)
    values = {
        "seed": args.seed,
        "output_dir": args.output_dir,
        "data.path": getattr(args, "data", None),
        "mcmc.n_accept": getattr(args, "n_accept", None),
        "mcmc.burn_in": getattr(args, "burn_in", None),
        "mcmc.full_budget": True if getattr(args, "full_budget", False) else None,
        "use_cache": False if getattr(args, "no_cache", False) else None,
    }
    case = args.case or getattr(args, "default_case", None)
    return config.build_run_config(case, args.set, **values)


def _simulate(args: argparse.Namespace) -> int:
    path = run_simulate(_run_config(args), args.output)
    print(path)
    return 0


def _identify(args: argparse.Namespace) -> int:
    result = run_identify(_run_config(args), clear_cache=args.clear_cache)
    print(result.summary)
    print(
        f"order {result.fitted.order}, k {result.fitted.k_map:.6g} -> "
        f"{result.fitted.k_corrected:.6g} (artifacts in {result.output_dir})"
    )
    return 0


def _predict(args: argparse.Namespace) -> int:
    report = run_predict(
        args.model,
        args.excitation,
        args.output_dir,
        z0=args.z0,
        zdot0=args.zdot0,
        fs=args.fs,
        truth_column=args.truth_column,
        linear=args.linear,
        upsample=args.upsample,
        psd_segment=args.psd_segment,
    )
    for name, value in report.metrics.items():
        print(f"{name}: {value:.6g}")
    return 0


def _prior_sensitivity(args: argparse.Namespace) -> int:
    config = _run_config(args)
    report = run_prior_sensitivity(
        config, args.n_priors, seed=config.seed, clear_cache=args.clear_cache
    )
    print(report)
    return 0


def _silverbox(args: argparse.Namespace) -> int:
    result = run_silverbox(_run_config(args), clear_cache=args.clear_cache)
    print(result.summary)
    for name, value in result.metrics.metrics.items():
        if name.startswith("test_"):
            print(f"{name}: {value:.6g}")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return exc.exit_code

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except GplfmError as exc:
        LOGGER.error("%s", exc)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
