#!/usr/bin/env python3
"""
Run the desk-scale benchmark end to end

synth -> preprocess -> train and eval each architecture -> report, all under
one output root, using a single run config.

With --scope the preprocess/train/eval/report part is repeated once per
training scope (a '+'-joined list of colleges, or UNIV for every student),
each under its own subdirectory. The test split is the same for every scope.

Usage:
    python scripts/run_benchmark.py [--config configs/default.yaml] [--out runs/benchmark]
                                    [--arch dkt --arch sakt] [--epochs 25] [--bayes]
                                    [--scope COE --scope COE+COAS --scope UNIV]
"""

import sys
from pathlib import Path

# Add backend to path
backend_path = Path(__file__).parent.parent / "backend"
sys.path.insert(0, str(backend_path))

import argparse
import logging
from typing import Dict, List, Optional, Sequence

from commands import resolve_config
from commands.evaluate import cmd_eval
from commands.preprocess import cmd_preprocess
from commands.report import cmd_report
from commands.synth import cmd_synth
from commands.train import CHECKPOINT_FILE, cmd_train
from errors import ConfigError
from schemas import ARCHITECTURES, RunConfig
from services.data_pipeline import load_split
from services.metrics import auc
from services.report_service import ReportResult
from services.synth_data import bayes_predictions, generate
from settings import get_settings

logging.basicConfig(
    level=logging.INFO,
    format='%(asctime)s - %(levelname)s - %(message)s'
)
logger = logging.getLogger(__name__)

UNIVERSITY_SCOPE = "UNIV"


def scope_colleges(label: str) -> Optional[List[str]]:
    """'COE+COAS' -> ['COE', 'COAS']; UNIV -> None (no training filter)"""
    colleges = [part.strip().upper() for part in label.split("+") if part.strip()]
    if not colleges:
        raise ConfigError(f"empty training scope {label!r}")
    if colleges == [UNIVERSITY_SCOPE]:
        return None
    if UNIVERSITY_SCOPE in colleges:
        raise ConfigError(f"{UNIVERSITY_SCOPE} cannot be combined with colleges in scope {label!r}")
    return colleges


def scope_dir_name(label: str) -> str:
    return label.strip().lower().replace("+", "_")


def run_scope(
    config: RunConfig,
    files: Dict[str, Path],
    out: Path,
    architectures: Sequence[str],
) -> ReportResult:
    """preprocess with config.data.train_colleges, then train, eval and report every architecture"""
    data_dir = out / "data"
    cmd_preprocess(files["records"], data_dir, config, files["metadata"])
    eval_dirs = []
    for arch in architectures:
        run_dir = out / arch.replace("+", "_plus")
        logger.info(f"Training {arch} into {run_dir}")
        cmd_train(data_dir, run_dir, config, arch)
        eval_dir = run_dir / "eval"
        reports = cmd_eval(run_dir / CHECKPOINT_FILE, data_dir, eval_dir, config)
        overall = reports[-1]
        logger.info(f"{arch}: overall AUC {overall.auc}, accuracy {overall.accuracy}")
        eval_dirs.append(eval_dir)
    return cmd_report(eval_dirs, out / "report", config)


def main(argv: Optional[List[str]] = None) -> int:
    parser = argparse.ArgumentParser(description="Run synth, preprocess, train, eval and report")
    parser.add_argument("--config", type=Path, default=Path(__file__).parent.parent / "configs" / "default.yaml")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", type=Path, default=Path("runs") / "benchmark")
    parser.add_argument("--arch", action="append", choices=ARCHITECTURES, help="repeatable; default all five")
    parser.add_argument("--epochs", type=int, default=None, help="override train.epochs")
    parser.add_argument("--bayes", action="store_true", help="also log the ground-truth AUC of the test split")
    parser.add_argument(
        "--scope", action="append", default=None,
        help="training scope, e.g. COE, COE+COAS or UNIV; repeatable; default data.train_colleges",
    )
    args = parser.parse_args(argv)

    config = resolve_config(args.config, args.seed, get_settings())
    if args.epochs is not None:
        config = config.model_copy(update={"train": config.train.model_copy(update={"epochs": args.epochs})})
    architectures = args.arch or list(ARCHITECTURES)

    corpus_dir = args.out / "corpus"
    logger.info(f"Generating corpus in {corpus_dir}")
    files = cmd_synth(config, corpus_dir)

    if args.scope:
        scopes = [(label, args.out / scope_dir_name(label), scope_colleges(label)) for label in args.scope]
    else:
        scopes = [("configured", args.out, config.data.train_colleges)]

    for label, out, colleges in scopes:
        scoped = config.model_copy(
            update={"data": config.data.model_copy(update={"train_colleges": colleges})}
        )
        logger.info(f"Training scope {label}: {', '.join(colleges) if colleges else 'all students'}")
        result = run_scope(scoped, files, out, architectures)
        for name, path in sorted(result.files.items()):
            logger.info(f"[{label}] {name}: {path}")

    if args.bayes:
        truth = generate(config.synth).truth
        split = load_split(scopes[0][1] / "data")
        logger.info(f"Bayes AUC on the test split: {auc(bayes_predictions(truth, split, config.train.max_seq_len)):.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
