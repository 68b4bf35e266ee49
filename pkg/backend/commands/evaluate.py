"""
eval: score a checkpoint on the test split, per department subset and overall
"""
import argparse
import logging
from pathlib import Path
from typing import List

from commands import add_common_arguments, output_dir, resolve_config
from errors import ConfigError
from schemas import RunConfig, write_resolved_config
from services.checkpoint import load_checkpoint
from services.data_pipeline import load_metadata, load_split
from services.metrics import MetricsReport, evaluate
from services.report_service import ReportService
from settings import Settings

logger = logging.getLogger(__name__)


def cmd_eval(checkpoint: Path, data_dir: Path, out_dir: Path, config: RunConfig) -> List[MetricsReport]:
    """
    Evaluate a trained model and write metrics.csv, metrics.txt and resolved_config.yaml

    Windows are cut at the max_seq_len the model was trained with.
    """
    split = load_split(data_dir)
    state, info = load_checkpoint(checkpoint, expected_vocabulary=split.vocabulary)
    metadata = load_metadata(data_dir)
    subsets = config.eval.subsets
    if metadata is None and any(s.departments is not None for s in subsets):
        raise ConfigError(f"department subsets need {data_dir / 'metadata.csv'}; preprocess with --metadata")

    max_len = info.train_config.max_seq_len if info.train_config else config.train.max_seq_len
    reports = evaluate(state, split, subsets, metadata, threshold=config.eval.threshold, max_len=max_len)
    for r in reports:
        if not r.empty:
            auc = f"{r.auc:.4f}" if r.auc is not None else "undefined"
            logger.info(f"{state.architecture} [{r.label}] n={r.n} auc={auc} accuracy={r.accuracy:.4f}")

    ReportService().export_metrics(reports, state.architecture, out_dir)
    provenance = {
        "checkpoint": str(checkpoint),
        "data_dir": str(data_dir),
        "architecture": state.architecture,
        "final_epoch": info.final_epoch,
        "max_seq_len": max_len,
        "filter_granularity": "student",
        "students_without_metadata": max((r.excluded_students for r in reports), default=0),
    }
    write_resolved_config(config, out_dir, provenance)
    return reports


def handle(args: argparse.Namespace, settings: Settings) -> int:
    config = resolve_config(args.config, args.seed, settings)
    out = output_dir(args.out, settings, "eval")
    cmd_eval(args.checkpoint, args.data, out, config)
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("eval", help="evaluate a checkpoint on the test split")
    parser.add_argument("checkpoint", type=Path, help="model.ckpt written by train")
    parser.add_argument("data", type=Path, help="preprocessed data directory")
    add_common_arguments(parser)
    parser.set_defaults(handler=handle)
