import argparse
import logging
import sys
from pathlib import Path
from typing import List, Optional

import torch

from app.commands import CommandContext, fim_validate, report, simulate, sweep, train
from app.config import settings
from app.services.config_service import config_service
from app.utils.errors import ConfigError

# Configure logging
logging.basicConfig(
    level=getattr(logging, settings.log_level.upper(), logging.INFO),
    format="%(asctime)s - %(name)s - %(levelname)s - %(message)s"
)
logger = logging.getLogger(__name__)

COMMANDS = {
    "simulate": simulate.run,
    "train": train.run,
    "sweep": sweep.run,
    "fim-validate": fim_validate.run,
    "report": report.run,
}

INCOMPLETE_MARKER = "INCOMPLETE"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="isac-sim",
        description="Secure multicarrier ISAC simulation: friendly jamming, Fisher information, training and sweeps",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument("--config", type=Path, default=None, help="Sectioned key-value config file")
        sub.add_argument("--seed", type=int, default=None, help="Master seed (overrides run.seed)")
        sub.add_argument("--out", type=Path, default=None, help="Output directory")
        sub.add_argument("--threads", type=int, default=None, help="Worker threads for Monte Carlo trials")
    return parser


def dispatch(command: str, ctx: CommandContext) -> bool:
    """Runs one command; returns whether its acceptance gate passed"""
    if command not in COMMANDS:
        raise ConfigError(f"unknown command '{command}'", key="command")
    logger.info(f"Running '{command}' with seed {ctx.cfg.seed} on {ctx.threads} thread(s)")
    return COMMANDS[command](ctx)


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    out_dir = args.out or Path(settings.results_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    marker = out_dir / INCOMPLETE_MARKER

    try:
        if args.config is not None:
            cfg = config_service.parse_config(args.config)
        else:
            cfg = config_service.parse_text("")
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise ValueError(f"--seed must be an unsigned 64-bit integer, got {args.seed}")
            cfg = cfg.with_value("run", "seed", args.seed)
        cfg = cfg.with_value("output", "directory", str(out_dir))

        threads = max(1, args.threads or settings.threads)
        torch.set_num_threads(settings.torch_num_threads)
        marker.unlink(missing_ok=True)
        config_service.write_resolved(cfg, out_dir)

        passed = dispatch(args.command, CommandContext(cfg=cfg, out_dir=out_dir, threads=threads))
    except Exception as e:
        logger.error(f"Command '{args.command}' failed: {e}")
        marker.write_text(f"{args.command}: {e}\n", encoding="utf-8")
        return 1

    if not passed:
        logger.warning(f"Command '{args.command}' finished but its acceptance gate failed")
        return 1
    logger.info(f"Command '{args.command}' completed")
    return 0


if __name__ == "__main__":
    sys.exit(main())
