"""
preprocess: course records CSV -> encoded train/test split directory
"""
import argparse
import logging
import shutil
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Dict, Optional

from commands import add_common_arguments, output_dir, resolve_config
from schemas import RunConfig, write_resolved_config
from services.data_pipeline import (
    DatasetSplit,
    filter_by_college,
    parse_metadata,
    parse_records,
    preprocess,
    save_split,
    write_rejects,
)
from services.synth_data import summarize
from settings import Settings

logger = logging.getLogger(__name__)


@dataclass
class PreprocessResult:
    split: DatasetSplit
    rejected: int
    files: Dict[str, Path] = field(default_factory=dict)


def cmd_preprocess(
    input_csv: Path,
    out_dir: Path,
    config: RunConfig,
    metadata_csv: Optional[Path] = None,
) -> PreprocessResult:
    """
    Parse, clean, encode and split a records file

    Args:
        input_csv: records CSV (academic_year, universal_id, course_subject, course_level, grade[, course_number])
        out_dir: destination directory
        config: resolved run config; data.boundary_year defaults to the last year present
        metadata_csv: optional student metadata, copied beside the split

    Returns:
        PreprocessResult with the split and written files
    """
    parsed = parse_records(input_csv)
    out_dir.mkdir(parents=True, exist_ok=True)
    files = {"rejects": out_dir / "rejects.csv"}
    write_rejects(parsed.rejects, files["rejects"])
    if parsed.rejects:
        logger.warning(f"Rejected {len(parsed.rejects)} rows of {input_csv}; see {files['rejects']}")

    boundary = config.data.boundary_year
    if boundary is None and parsed.records:
        boundary = max(r.academic_year for r in parsed.records)
    provenance = {"input": str(input_csv), "rejected_rows": len(parsed.rejects)}
    split, cleaned = preprocess(parsed.records, boundary, provenance)
    logger.info(
        f"Cleaned {len(parsed.records)} -> {len(cleaned.records)} records, {split.num_skills} skills"
    )

    if metadata_csv is not None:
        metadata = parse_metadata(metadata_csv)
        files["metadata"] = out_dir / "metadata.csv"
        if Path(metadata_csv).resolve() != files["metadata"].resolve():
            shutil.copyfile(metadata_csv, files["metadata"])
        if config.data.train_colleges:
            scoped = filter_by_college(split, metadata, config.data.train_colleges, config.data.missing_metadata)
            split = replace(split, train=scoped.train, provenance=scoped.provenance)
    elif config.data.train_colleges:
        logger.warning("train_colleges is set but no metadata was given; training scope left unfiltered")

    stats = summarize(parsed.records)
    files["statistics"] = out_dir / "statistics.csv"
    stats.to_frame().to_csv(files["statistics"], index=False)
    save_split(split, out_dir)
    files["resolved_config"] = write_resolved_config(config, out_dir, split.provenance)
    return PreprocessResult(split=split, rejected=len(parsed.rejects), files=files)


def handle(args: argparse.Namespace, settings: Settings) -> int:
    config = resolve_config(args.config, args.seed, settings)
    if args.boundary_year is not None:
        config = config.model_copy(update={"data": config.data.model_copy(update={"boundary_year": args.boundary_year})})
    out = output_dir(args.out, settings, "preprocess")
    result = cmd_preprocess(args.input, out, config, args.metadata)
    logger.info(
        f"Wrote split to {out}: {len(result.split.train)} train / {len(result.split.test)} test sequences"
    )
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("preprocess", help="encode and split a course records CSV")
    parser.add_argument("input", type=Path, help="records CSV")
    parser.add_argument("--metadata", type=Path, default=None, help="student metadata CSV")
    parser.add_argument("--boundary-year", type=int, default=None, help="first test year")
    add_common_arguments(parser)
    parser.set_defaults(handler=handle)
