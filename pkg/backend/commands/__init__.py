"""
CLI command handlers

Each module exposes a cmd_* function that does the work and a register()
that wires it into the argparse sub-command table.
"""
import argparse
from pathlib import Path
from typing import Optional

from schemas import RunConfig, load_run_config
from settings import Settings


def add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, default=None, help="YAML run config")
    parser.add_argument("--seed", type=int, default=None, help="overrides every seed in the config")
    parser.add_argument("--out", type=Path, default=None, help="output directory")


def resolve_config(config_path: Optional[Path], seed: Optional[int], settings: Settings) -> RunConfig:
    """Config file (or defaults seeded from settings) with every section seed filled in"""
    if config_path is None:
        config = RunConfig(seed=settings.default_seed)
    else:
        config = load_run_config(config_path)
    return config.resolved(seed)


def output_dir(out: Optional[Path], settings: Settings, verb: str) -> Path:
    path = out if out is not None else settings.output_root / verb
    path.mkdir(parents=True, exist_ok=True)
    return path
