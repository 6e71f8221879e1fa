"""
`coop-diffusion <command> --config <path> --out <dir> [--seed N] [--values ...] [-v]`

Exit codes: 0 success, 2 configuration error, 3 numerical/runtime error.
"""
import argparse
import json
import logging
import sys
from typing import List, Optional, Sequence

from ..exceptions import (
    ConfigurationError,
    ImproperlyConfiguredExperiment,
    NumericalDomainError,
    ParameterError,
    ShapeError,
    TrainingDivergedError,
    UndefinedStatisticError,
)
from .settings import configure_django

logger = logging.getLogger(__name__)

EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_ERROR = 3

COMMAND_NAMES = ("sample", "fuse", "train", "ablate-tstruct", "compare-strategies", "eval")


def _timestep_list(text: str) -> List[int]:
    try:
        return [int(v) for v in text.replace(",", " ").split()]
    except ValueError as e:
        raise argparse.ArgumentTypeError(f"expected comma-separated timesteps, got `{text}`") from e


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="coop-diffusion",
        description="Diffusion sampling, time-decoupled training and cooperative model fusion.",
    )
    parser.add_argument("command", choices=COMMAND_NAMES)
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--seed", type=int, default=None, help="overrides the config seed")
    parser.add_argument(
        "--values",
        type=_timestep_list,
        default=None,
        help="T_struct values for ablate-tstruct, e.g. 200,500,800",
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def load_config(path: str, seed: Optional[int], values: Optional[List[int]]):
    try:
        with open(path) as f:
            data = json.load(f)
    except FileNotFoundError as e:
        raise ConfigurationError(f"Config file `{path}` does not exist") from e
    except ValueError as e:
        raise ConfigurationError(f"Config file `{path}` is not valid JSON: {e}") from e
    if isinstance(data, dict):
        if seed is not None:
            data["seed"] = seed
        if values is not None:
            data["ablation"] = dict(data.get("ablation") or {}, values=values)
    return data


def run(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    configure_django()
    from .commands import COMMANDS
    from .serializers import validate_config

    try:
        config = validate_config(load_config(args.config, args.seed, args.values), args.command)
        logger.info("Running %(command)s into %(out)s", {"command": args.command, "out": args.out})
        code = COMMANDS[args.command](config, args.out, config["seed"])
    except (ImproperlyConfiguredExperiment, ConfigurationError, ParameterError, ShapeError) as e:
        print(f"coop-diffusion: configuration error:\n{e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except FileNotFoundError as e:
        print(f"coop-diffusion: configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except TrainingDivergedError as e:
        print(f"coop-diffusion: training diverged at step {e.step}: {e}", file=sys.stderr)
        return EXIT_NUMERICAL_ERROR
    except (NumericalDomainError, UndefinedStatisticError, FloatingPointError) as e:
        print(f"coop-diffusion: numerical error: {e}", file=sys.stderr)
        return EXIT_NUMERICAL_ERROR
    logger.info("Finished %(command)s", {"command": args.command})
    return code


def main() -> None:
    sys.exit(run())
