import argparse
import json
import sys
from pathlib import Path

from loguru import logger
from rich.console import Console
from rich.panel import Panel

from cvforge.commands import Workflow, registered_commands
from cvforge.config import load_config
from cvforge.errors import CVForgeError, SimulationDivergedError
from cvforge.utils.db import RunRegistry

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2
EXIT_DIVERGED = 3


def _label_list(text: str) -> list[str]:
    return [label.strip() for label in text.split(",")]


def _export_overrides(args: argparse.Namespace) -> list[str]:
    overrides = list(args.overrides)
    if getattr(args, "model", None) is not None:
        overrides.append(f"export.model={json.dumps(str(args.model))}")
    if getattr(args, "labels", None) is not None:
        overrides.append(f"export.labels={json.dumps(args.labels)}")
    return overrides


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="cvforge", description="Classifier-derived collective variables for metadynamics"
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, info in registered_commands().items():
        p = sub.add_parser(name, help=info.description, description=info.description)
        p.add_argument("--config", type=Path, help="TOML workflow configuration")
        p.add_argument("--seed", type=int, help="master seed (overrides the config)")
        p.add_argument("--out", type=Path, help="output directory (overrides the config)")
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="override a config field, e.g. metad.steps=100000 (repeatable)",
        )
        p.add_argument("--verbose", action="store_true", help="log at DEBUG level")
        if name in ("export", "report"):
            p.add_argument("--model", type=Path, help="model bundle to export (default: <out>/train/model.json)")
            p.add_argument(
                "--labels",
                type=_label_list,
                help="comma-separated PLUMED labels of the input features, in feature order",
            )
    return parser


def _setup_logging(verbose: bool, out_dir: Path | None = None):
    logger.remove()
    logger.add(sys.stderr, level="DEBUG" if verbose else "INFO")
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        logger.add(out_dir / "cvforge.log", level="DEBUG", encoding="utf-8")


def main(argv: list[str] | None = None) -> int:
    console = Console(stderr=False)
    args = build_parser().parse_args(argv)
    _setup_logging(args.verbose)
    try:
        config = load_config(args.config, _export_overrides(args), args.seed, args.out)
        _setup_logging(args.verbose, config.out_dir)
        with RunRegistry(config.out_dir) as registry:
            output = Workflow(config, console, registry).execute(args.command)
        console.print(output)
        return EXIT_OK
    except SimulationDivergedError as e:
        console.print(Panel.fit(str(e), title="diverged", border_style="red"))
        return EXIT_DIVERGED
    except CVForgeError as e:
        console.print(Panel.fit(str(e), title=type(e).__name__, border_style="red"))
        return EXIT_INVALID
    except Exception as e:
        logger.exception("unexpected failure")
        console.print(Panel.fit(str(e), border_style="red"))
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
