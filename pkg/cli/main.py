"""
Command line entry point: validate and run experiment configs, list the
registered experiments.
"""

import argparse
import json
import logging
import os
import sys
import time
from datetime import datetime, timezone
from pathlib import Path
from typing import Dict, List, Optional

from pydantic import ValidationError
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from cli.experiments import EXPERIMENTS, RunContext
from cli.schemas.experiments import EXPERIMENT_CONFIG
from core import __version__
from core.errors import ConfigurationError, RcvError

logger = logging.getLogger("rcv")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

SEED_ENV = "RCV_SEED"
MANIFEST_NAME = "manifest.json"


def configure_logging(verbose: bool = False, quiet: bool = False) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    root = logging.getLogger()
    root.handlers[:] = [RichHandler(show_path=False)]
    root.setLevel(level)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rcv", description="Reaction coordinate validation experiments")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in [("run", "Run an experiment config"), ("validate", "Validate a config without running")]:
        cmd = sub.add_parser(name, help=help_text)
        cmd.add_argument("config", type=Path, help="Experiment config (JSON)")
        cmd.add_argument(
            "--seed",
            type=int,
            default=None,
            help=f"Root seed (CLI > env:{SEED_ENV} > config file)",
        )
        cmd.add_argument("--output-dir", default=None, help="Output directory (CLI > config file)")
        cmd.add_argument(
            "--param",
            action="append",
            default=[],
            metavar="KEY=VALUE",
            help="Override an experiment parameter; dotted keys reach nested models (quad.m_outer=64)",
        )
        cmd.add_argument("--threads", type=int, default=1, help="Worker threads")

    sub.add_parser("list-experiments", help="List registered experiments")
    return parser


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(raw: Dict, seed: Optional[int], output_dir: Optional[str], params: List[str]) -> Dict:
    """Merge flags and environment into the raw config, flags first."""
    raw = dict(raw)
    if seed is not None:
        raw['seed'] = seed
    elif os.environ.get(SEED_ENV):
        try:
            raw['seed'] = int(os.environ[SEED_ENV])
        except ValueError:
            raise ConfigurationError(f"{SEED_ENV}={os.environ[SEED_ENV]!r} is not an integer")
    if output_dir is not None:
        raw['output_dir'] = output_dir

    parameters = dict(raw.get('parameters') or {})
    for item in params:
        key, sep, value = item.partition("=")
        if not sep or not key:
            raise ConfigurationError(f"--param expects KEY=VALUE, got {item!r}")
        *parents, leaf = key.split(".")
        node = parameters
        for part in parents:
            node[part] = dict(node.get(part) or {})
            node = node[part]
        node[leaf] = _parse_value(value)
    raw['parameters'] = parameters
    return raw


def load_config(args):
    try:
        raw = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigurationError(f"cannot read {args.config}: {e}") from e
    if not isinstance(raw, dict):
        raise ConfigurationError(f"{args.config} must hold a JSON object")
    return EXPERIMENT_CONFIG.validate_python(apply_overrides(raw, args.seed, args.output_dir, args.param))


def write_manifest(config, experiment, ctx: RunContext, started: datetime, runtime: float, outputs) -> Path:
    manifest = {
        'experiment': experiment.name,
        'version': __version__,
        'config': EXPERIMENT_CONFIG.dump_python(config, mode="json"),
        'started': started.isoformat(),
        'finished': datetime.now(timezone.utc).isoformat(),
        'runtime_seconds': round(runtime, 3),
        'budget_minutes': experiment.budget_minutes,
        'threads': ctx.threads,
        'outputs': [p.name for p in outputs],
    }
    path = ctx.output_dir / MANIFEST_NAME
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


def run(args) -> int:
    config = load_config(args)
    experiment = EXPERIMENTS[config.experiment]
    ctx = RunContext(seed=config.seed, output_dir=Path(config.output_dir), threads=max(1, args.threads))
    ctx.output_dir.mkdir(parents=True, exist_ok=True)

    logger.info("Running %s (seed %d, %d thread(s))", experiment.name, ctx.seed, ctx.threads)
    started = datetime.now(timezone.utc)
    t0 = time.perf_counter()
    outputs = experiment.runner(config.parameters, ctx)
    runtime = time.perf_counter() - t0

    manifest = write_manifest(config, experiment, ctx, started, runtime, outputs)
    logger.info("Finished %s in %.1f s, manifest at %s", experiment.name, runtime, manifest)
    if runtime > 60 * experiment.budget_minutes:
        logger.warning("%s exceeded its %d minute budget", experiment.name, experiment.budget_minutes)
    return EXIT_OK


def validate(args) -> int:
    config = load_config(args)
    Console().print(f"[green]valid[/green] {config.experiment} config (seed {config.seed})")
    return EXIT_OK


def list_experiments(_args) -> int:
    table = Table(title="Experiments")
    table.add_column("name")
    table.add_column("budget (min)", justify="right")
    table.add_column("description")
    for experiment in EXPERIMENTS.values():
        table.add_row(experiment.name, str(experiment.budget_minutes), experiment.description)
    Console().print(table)
    return EXIT_OK


COMMANDS = {'run': run, 'validate': validate, 'list-experiments': list_experiments}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        return COMMANDS[args.command](args)
    except ValidationError as e:
        for error in e.errors():
            location = ".".join(str(part) for part in error['loc'])
            logger.error("config error at %s: %s", location or "<root>", error['msg'])
        return EXIT_CONFIG
    except ConfigurationError as e:
        logger.error("configuration error: %s", e)
        return EXIT_CONFIG
    except RcvError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_RUNTIME
    except Exception:
        logger.exception("unexpected failure")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
