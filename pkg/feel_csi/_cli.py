"""
Command-line interface for the FEEL CSI-feedback simulator.
"""

import argparse
import sys
from typing import Any, Dict, List, Optional

from ._config import config_hash, create_example_config, load_config
from ._exceptions import (
    ConfigError,
    DatasetExistsError,
    FeelError,
    FormatError,
    MissingDatasetError,
)
from ._harness import ExperimentRunner, evaluate_model, inspect_files
from ._reporting import Reporter

try:
    from importlib.metadata import version as _pkg_version

    __version__ = _pkg_version("feel-csi-feedback")
except Exception:
    __version__ = "0.1.0"

EXIT_INVARIANT = 1
EXIT_USAGE = 2
EXIT_IO = 3
EXAMPLE_CONFIG_FILE = "example_config.yml"


def _print_unless_quiet(msg: str, quiet: bool = False):
    """Print a message unless quiet mode is enabled."""
    if not quiet:
        print(msg)


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument(
        "-q",
        "--quiet",
        action="store_true",
        help="Suppress all output except errors",
    )
    common.add_argument(
        "-v",
        "--verbose",
        action="count",
        default=0,
        help="""Increase verbosity levels:
  (none): Only show final summary
  -v: Show experiment stages and trend checks
  -vv: Show per-round and per-UE progress
  -vvv: Show debug information""",
    )
    return common


def _config_options() -> argparse.ArgumentParser:
    options = argparse.ArgumentParser(add_help=False)
    options.add_argument("--config", metavar="PATH", help="YAML experiment configuration")
    options.add_argument("--seed", type=int, metavar="N", help="Override master_seed")
    options.add_argument("--out", metavar="DIR", help="Override the output directory (out_dir)")
    return options


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    config = _config_options()
    parser = argparse.ArgumentParser(
        prog="feel-csi",
        description="Desk-scale federated edge learning simulator for CSI-feedback autoencoders",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  # Write the documented defaults to example_config.yml
  feel-csi --create-example-config

  # Generate per-UE datasets, then run the framework comparison
  feel-csi generate-data --config example_config.yml
  feel-csi run --config example_config.yml -v

  # Run another experiment grid with a different seed
  feel-csi run --config example_config.yml --experiment quant-sweep --seed 7

  # Evaluate a global model on two UEs and inspect file headers
  feel-csi evaluate results/runs/compare-frameworks/default/global.feelnn \\
      results/data/deploy/ue_001.feelcsi results/data/deploy/ue_002.feelcsi
  feel-csi inspect results/data/deploy/ue_001.feelcsi
        """,
    )
    parser.add_argument(
        "--create-example-config",
        action="store_true",
        help=f"Write an example configuration to {EXAMPLE_CONFIG_FILE} and exit",
    )
    parser.add_argument(
        "--version",
        action="version",
        version=f"%(prog)s {__version__}",
    )

    verbs = parser.add_subparsers(dest="command", metavar="COMMAND")
    generate = verbs.add_parser(
        "generate-data", parents=[common, config], help="Generate per-UE dataset files and the manifest"
    )
    generate.add_argument(
        "--overwrite", action="store_true", help="Replace existing dataset files"
    )

    run = verbs.add_parser("run", parents=[common, config], help="Run an experiment grid")
    run.add_argument("--experiment", metavar="ID", help="Override the configured experiment id")

    evaluate = verbs.add_parser(
        "evaluate", parents=[common], help="NMSE of a model checkpoint on dataset files"
    )
    evaluate.add_argument("model_file", help="FEELNN01 model checkpoint")
    evaluate.add_argument("dataset_files", nargs="+", help="FEELCSI1 dataset files")

    inspect = verbs.add_parser(
        "inspect", parents=[common], help="Print dataset, model or payload headers"
    )
    inspect.add_argument("paths", nargs="+", help="Files to inspect")
    return parser


def _overrides(args) -> Dict[str, Any]:
    overrides: Dict[str, Any] = {}
    if getattr(args, "seed", None) is not None:
        overrides["master_seed"] = args.seed
    if getattr(args, "out", None):
        overrides["out_dir"] = args.out
    if getattr(args, "experiment", None):
        overrides["experiment"] = args.experiment
    return overrides


def _generate_data(args, reporter: Reporter, quiet: bool):
    cfg = load_config(args.config, _overrides(args))
    manifest = ExperimentRunner(cfg, reporter).generate_data(overwrite=args.overwrite)
    _print_unless_quiet(f"Datasets written, manifest: {manifest}", quiet)


def _run(args, reporter: Reporter, quiet: bool):
    cfg = load_config(args.config, _overrides(args))
    runner = ExperimentRunner(cfg, reporter)
    report = runner.run_experiment()
    reporter.log_summary(
        f"{cfg.experiment} summary",
        {
            "Config hash": config_hash(cfg),
            "Master seed": cfg.master_seed,
            "Results": runner.run_dir,
            "Wall clock (s)": report.wall_clock_s,
        },
        extra={
            **{
                name: f"G-NMSE {values['g_nmse_db']:.2f} dB, I-NMSE {values['i_nmse_db']:.2f} dB"
                for name, values in report.frameworks.items()
            },
            **{f"trend {name}": holds for name, holds in report.trends.items()},
        },
    )


def main(argv: Optional[List[str]] = None):  # noqa: C901
    parser = build_parser()
    args = parser.parse_args(argv)

    quiet = getattr(args, "quiet", False)
    verbosity = -1 if quiet else getattr(args, "verbose", 0)

    if args.create_example_config:
        with open(EXAMPLE_CONFIG_FILE, "w", encoding="utf-8") as f:
            f.write(create_example_config())
        _print_unless_quiet(f"Example configuration saved to: {EXAMPLE_CONFIG_FILE}", quiet)
        return

    if args.command is None:
        parser.error("a command is required (generate-data, run, evaluate, inspect)")

    reporter = Reporter(verbosity)
    try:
        if args.command == "generate-data":
            _generate_data(args, reporter, quiet)
        elif args.command == "run":
            _run(args, reporter, quiet)
        elif args.command == "evaluate":
            evaluate_model(args.model_file, args.dataset_files, reporter)
        elif args.command == "inspect":
            inspect_files(args.paths, reporter)
    except ConfigError as e:
        _print_unless_quiet(f"Error: {e}", quiet)
        sys.exit(EXIT_USAGE)
    except (FormatError, DatasetExistsError, MissingDatasetError, OSError) as e:
        _print_unless_quiet(f"Error: {e}", quiet)
        sys.exit(EXIT_IO)
    except FeelError as e:
        _print_unless_quiet(f"Error: {e}", quiet)
        sys.exit(EXIT_INVARIANT)
    except KeyboardInterrupt:
        _print_unless_quiet("\nInterrupted.", quiet)
        sys.exit(130)
    except Exception as e:
        _print_unless_quiet(f"Unexpected error: {e}", quiet)
        sys.exit(1)
