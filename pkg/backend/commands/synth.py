"""
synth: seeded synthetic corpus with ground truth
"""
import argparse
import logging
from pathlib import Path
from typing import Dict

from commands import add_common_arguments, output_dir, resolve_config
from schemas import RunConfig, write_resolved_config
from services.synth_data import SynthCorpus, generate, write_corpus
from settings import Settings

logger = logging.getLogger(__name__)


def cmd_synth(config: RunConfig, out_dir: Path) -> Dict[str, Path]:
    """Generate records.csv, metadata.csv, ground_truth.csv and resolved_config.yaml"""
    corpus: SynthCorpus = generate(config.synth)
    files = write_corpus(corpus, out_dir)
    book = corpus.bookkeeping
    provenance = {
        "intercept": float(corpus.truth.intercept),
        "total_records": book.total_records,
        "interactions": book.interactions,
        "noise_records": book.noise_records,
        "students": book.students,
        "course_types": book.course_types,
        "kc_types": book.kc_types,
    }
    files["resolved_config"] = write_resolved_config(config, out_dir, provenance)
    return files


def handle(args: argparse.Namespace, settings: Settings) -> int:
    config = resolve_config(args.config, args.seed, settings)
    out = output_dir(args.out, settings, "synth")
    files = cmd_synth(config, out)
    logger.info(f"Wrote synthetic corpus to {out} ({', '.join(sorted(f.name for f in files.values()))})")
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("synth", help="generate a synthetic course records corpus")
    add_common_arguments(parser)
    parser.set_defaults(handler=handle)
