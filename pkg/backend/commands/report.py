"""
report: merge evaluated runs into the model comparison tables
"""
import argparse
import logging
from pathlib import Path
from typing import Optional, Sequence

from commands import add_common_arguments, output_dir, resolve_config
from schemas import RunConfig, write_resolved_config
from services.report_service import ReportResult, ReportService
from settings import Settings

logger = logging.getLogger(__name__)


def cmd_report(run_dirs: Sequence[Path], out_dir: Path, config: Optional[RunConfig] = None) -> ReportResult:
    service = ReportService()
    runs = [service.load_run(Path(d)) for d in run_dirs]
    result = service.export_comparison(runs, out_dir)
    if config is not None:
        result.files["resolved_config"] = write_resolved_config(
            config, out_dir, {"runs": [str(d) for d in run_dirs]}
        )
    return result


def handle(args: argparse.Namespace, settings: Settings) -> int:
    config = resolve_config(args.config, args.seed, settings)
    out = output_dir(args.out, settings, "report")
    result = cmd_report(args.runs, out, config)
    for name, path in sorted(result.files.items()):
        logger.info(f"{name}: {path}")
    return 0


def register(subparsers) -> None:
    parser = subparsers.add_parser("report", help="compare evaluated runs")
    parser.add_argument("runs", type=Path, nargs="+", help="eval output directories")
    add_common_arguments(parser)
    parser.set_defaults(handler=handle)
