import argparse
from collections.abc import Sequence
from importlib import resources
import logging
import logging.config
from pathlib import Path
import sys

import yaml

from .audit.service import init_audit_service
from .errors import ConfigError, SolverError
from .logic.run_logic import SolverLogic, format_summary, write_reference_config
from .models.config import load_config

logger = logging.getLogger(__name__)

SUBCOMMANDS = (
    "eval",
    "constant",
    "solve-stoch",
    "solve-det",
    "simulate",
    "sweep",
    "verify",
    "defaults",
)


def configure_logging(quiet: bool = False) -> None:
    with resources.open_text(__package__, "log_config.yaml") as f:
        log_config = yaml.safe_load(f.read())
    if quiet:
        log_config["handlers"]["console"]["level"] = "WARNING"
    logging.config.dictConfig(log_config)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sovdebt",
        description="Equilibrium solver for sovereign debt management",
    )
    parser.add_argument("command", choices=SUBCOMMANDS)
    parser.add_argument("--config", help="YAML config (relative to $SOVDEBT_CONFIG_DIR when set)")
    parser.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="SECTION.KEY=VALUE",
        help="override one config key; repeatable",
    )
    parser.add_argument("--out", help="output directory (overrides output.directory)")
    parser.add_argument("--seed", type=int, help="seed for simulations and random checks")
    parser.add_argument("--quiet", action="store_true", help="only warnings on the console")

    probe = parser.add_argument_group("eval")
    probe.add_argument("--x", type=float, default=1.0, help="debt ratio")
    probe.add_argument("--xi", type=float, default=0.1, help="adjoint variable")
    probe.add_argument("--p", type=float, default=1.0, help="bond price")
    return parser


def run(args: argparse.Namespace) -> int:
    overrides = list(args.overrides)
    if args.out:
        overrides.append(f"output.directory={args.out}")
    if args.seed is not None:
        overrides.extend([f"sim.seed={args.seed}", f"checks.seed={args.seed}"])

    if args.command == "defaults":
        path = write_reference_config(Path(args.out or "out"))
        logger.info(f"Reference configuration written to {path}")
        return 0

    config = load_config(args.config, overrides)
    out_dir = Path(config.output.directory)
    logic = SolverLogic(config, out_dir)
    audit = init_audit_service()
    try:
        match args.command:
            case "eval":
                probe = logic.evaluate(args.x, args.xi, args.p)
                logger.info(f"H={probe.value:.10g}, H_xi={probe.grad_xi:.10g}, u*={probe.u_opt:.6g}, v*={probe.v_opt:.6g}")
            case "constant":
                logic.constant()
            case "solve-stoch":
                logic.solve_stochastic()
            case "solve-det":
                logic.solve_deterministic()
            case "simulate":
                logic.simulate()
            case "sweep":
                logic.sweep()
            case "verify":
                summary = logic.verify()
                sys.stdout.write(format_summary(summary) + "\n")
                if not summary.passed:
                    return 1
    finally:
        audit.dump(out_dir / "run_audit.json")
    return 0


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.quiet)
    try:
        return run(args)
    except ConfigError as e:
        logger.error(f"Configuration error: {e}")
        return e.exit_status
    except SolverError as e:
        logger.error(f"{type(e).__name__}: {e}", exc_info=True)
        return e.exit_status


if __name__ == "__main__":
    sys.exit(main())
