"""
Command-line entry point for the knowledge tracing engine

    python backend/main.py synth --out runs/corpus
    python backend/main.py preprocess runs/corpus/records.csv --metadata runs/corpus/metadata.csv --out runs/data
    python backend/main.py train runs/data --arch dkt --out runs/dkt
    python backend/main.py eval runs/dkt/model.ckpt runs/data --out runs/dkt/eval
    python backend/main.py report runs/*/eval --out runs/report
"""
import argparse
import logging
import sys
from typing import List, Optional

from commands import evaluate, preprocess, report, synth, train
from settings import get_settings

logger = logging.getLogger(__name__)

EXIT_IO = 5
EXIT_UNHANDLED = 1


def configure_logging(level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level.upper(), logging.INFO),
        format='{"time": "%(asctime)s", "level": "%(levelname)s", "name": "%(name)s", "message": "%(message)s"}',
        datefmt='%Y-%m-%d %H:%M:%S',
        force=True,
    )


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kt",
        description="Knowledge tracing on course records: DKT, DKT+, DKVMN, SAKT, KQN",
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    for module in (preprocess, synth, train, evaluate, report):
        module.register(subparsers)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one CLI verb

    Returns:
        0 on success; 2 config, 3 data, 4 numeric, 5 IO/checkpoint, 1 anything else
    """
    settings = get_settings()
    configure_logging(settings.log_level)
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args, settings)
    except OSError as exc:
        logger.error(f"IO failure: {type(exc).__name__}: {exc}", exc_info=True)
        return EXIT_IO
    except Exception as exc:
        code = getattr(exc, "exit_code", None)
        if code is None:
            logger.error(f"Unhandled exception: {type(exc).__name__}: {exc}", exc_info=True)
            return EXIT_UNHANDLED
        logger.error(f"{type(exc).__name__}: {exc}", exc_info=True)
        return code


if __name__ == "__main__":
    sys.exit(main())
