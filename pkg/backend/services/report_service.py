"""
Report Service
Handles exporting evaluation reports and cross-model comparison grids (CSV, text tables)
"""
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from errors import DataFormatError, MergeError
from schemas import ARCHITECTURES, DISPLAY_NAMES
from services.metrics import AGGREGATE_LABEL, MetricsReport

logger = logging.getLogger(__name__)

METRICS_FILE = "metrics.csv"
METRIC_COLUMNS = ["auc", "accuracy", "recall", "precision", "f1"]
METRIC_TITLES = {"auc": "AUC", "accuracy": "ACC", "recall": "Recall", "precision": "Precision", "f1": "F1"}
AVERAGE_LABEL = "Average"

# Paired layout: discrimination table, then the pass-class table
TABLE_GROUPS = {
    "auc_accuracy": ["auc", "accuracy"],
    "recall_precision_f1": ["recall", "precision", "f1"],
}


@dataclass
class ReportResult:
    """
    Result of a report export
    """
    success: bool
    files: Dict[str, Path] = field(default_factory=dict)
    models: List[str] = field(default_factory=list)
    subsets: List[str] = field(default_factory=list)
    error: Optional[str] = None


@dataclass
class RunMetrics:
    architecture: str
    frame: pd.DataFrame
    source: Path


class ReportService:
    """
    Service for writing per-run metrics and merging runs into comparison grids
    """

    def __init__(self, float_format: str = "%.4f"):
        """
        Args:
            float_format: number format of the text tables (CSV keeps full precision)
        """
        self.float_format = float_format

    def metrics_frame(self, reports: Sequence[MetricsReport], architecture: str) -> pd.DataFrame:
        frame = pd.DataFrame([r.as_row() for r in reports])
        frame.insert(0, "architecture", architecture)
        return frame

    def export_metrics(self, reports: Sequence[MetricsReport], architecture: str, out_dir: Path) -> ReportResult:
        """
        Write metrics.csv and metrics.txt for one evaluated model

        Args:
            reports: per-subset reports, aggregate included
            architecture: architecture tag of the evaluated model
            out_dir: evaluation output directory

        Returns:
            ReportResult naming the written files
        """
        out_dir.mkdir(parents=True, exist_ok=True)
        frame = self.metrics_frame(reports, architecture)
        csv_path = out_dir / METRICS_FILE
        frame.to_csv(csv_path, index=False, float_format="%.17g")

        shown = frame.set_index("subset")[["n"] + METRIC_COLUMNS].rename(columns=METRIC_TITLES)
        text = f"{DISPLAY_NAMES.get(architecture, architecture)}\n" + shown.to_string(
            float_format=lambda v: self.float_format % v, na_rep="-"
        )
        txt_path = out_dir / "metrics.txt"
        txt_path.write_text(text + "\n", encoding="utf-8")
        logger.info(f"Exported metrics for {architecture} ({len(reports)} subsets) to {out_dir}")
        return ReportResult(
            success=True,
            files={"csv": csv_path, "text": txt_path},
            models=[architecture],
            subsets=list(frame["subset"]),
        )

    def load_run(self, run_dir: Path) -> RunMetrics:
        path = run_dir / METRICS_FILE
        if not path.exists():
            raise DataFormatError(f"{run_dir} has no {METRICS_FILE}; run eval first")
        frame = pd.read_csv(
            path,
            dtype={"subset": str, "architecture": str},
            keep_default_na=False,
            na_values=[""],
            float_precision="round_trip",
        )
        missing = {"architecture", "subset", *METRIC_COLUMNS} - set(frame.columns)
        if missing:
            raise DataFormatError(f"{path} lacks columns {sorted(missing)}")
        architectures = set(frame["architecture"])
        if len(architectures) != 1:
            raise DataFormatError(f"{path} mixes architectures {sorted(architectures)}")
        return RunMetrics(architecture=architectures.pop(), frame=frame, source=path)

    def merge(self, runs: Sequence[RunMetrics]) -> pd.DataFrame:
        """
        Long table (architecture, subset, metric columns) over every run

        Rows follow the fixed architecture order, subsets keep the order of the
        first run with the department average appended.

        Raises:
            MergeError: subset labels differ between runs, or an architecture repeats
        """
        if not runs:
            raise MergeError("no runs to merge")
        labels = [list(r.frame["subset"]) for r in runs]
        if any(set(l) != set(labels[0]) for l in labels[1:]):
            listing = "; ".join(f"{r.architecture}: {sorted(set(l))}" for r, l in zip(runs, labels))
            raise MergeError(f"runs disagree on subset labels ({listing})")
        seen: Dict[str, Path] = {}
        for r in runs:
            if r.architecture in seen:
                raise MergeError(f"architecture {r.architecture} appears twice ({seen[r.architecture]}, {r.source})")
            seen[r.architecture] = r.source

        order = {tag: i for i, tag in enumerate(ARCHITECTURES)}
        subsets = labels[0]
        rows = []
        for run in sorted(runs, key=lambda r: order.get(r.architecture, len(order))):
            indexed = run.frame.set_index("subset")
            for label in subsets:
                rows.append({"architecture": run.architecture, "subset": label,
                             **{m: indexed.at[label, m] for m in METRIC_COLUMNS}})
            departments = [l for l in subsets if not self._is_aggregate(indexed, l)]
            rows.append({"architecture": run.architecture, "subset": AVERAGE_LABEL,
                         **{m: self._average(indexed.loc[departments, m]) for m in METRIC_COLUMNS}})
        return pd.DataFrame(rows)

    def _is_aggregate(self, indexed: pd.DataFrame, label: str) -> bool:
        if "aggregate" in indexed.columns:
            return bool(indexed.at[label, "aggregate"])
        return label == AGGREGATE_LABEL

    def _average(self, values: pd.Series) -> float:
        present = values.dropna().astype(float)
        return float(present.mean()) if len(present) else np.nan

    def model_grid(self, merged: pd.DataFrame) -> pd.DataFrame:
        """One row per model, columns "<subset> <metric>"; the CSV form of the comparison"""
        models = list(dict.fromkeys(merged["architecture"]))
        subsets = list(dict.fromkeys(merged["subset"]))
        indexed = merged.set_index(["architecture", "subset"])
        grid = pd.DataFrame(
            [
                {"model": DISPLAY_NAMES.get(m, m),
                 **{f"{s} {METRIC_TITLES[k]}": indexed.at[(m, s), k] for s in subsets for k in METRIC_COLUMNS}}
                for m in models
            ]
        )
        return grid

    def subset_table(self, merged: pd.DataFrame, metrics: Sequence[str]) -> pd.DataFrame:
        """Subsets as rows, (model, metric) column pairs"""
        models = list(dict.fromkeys(merged["architecture"]))
        subsets = list(dict.fromkeys(merged["subset"]))
        indexed = merged.set_index(["architecture", "subset"])
        columns = pd.MultiIndex.from_tuples(
            [(DISPLAY_NAMES.get(m, m), METRIC_TITLES[k]) for m in models for k in metrics]
        )
        data = [[indexed.at[(m, s), k] for m in models for k in metrics] for s in subsets]
        return pd.DataFrame(data, index=pd.Index(subsets, name="subset"), columns=columns)

    def export_comparison(self, runs: Sequence[RunMetrics], out_dir: Path) -> ReportResult:
        """Write comparison.csv (model rows), comparison_long.csv and the paired text tables"""
        merged = self.merge(runs)
        out_dir.mkdir(parents=True, exist_ok=True)
        files = {
            "long": out_dir / "comparison_long.csv",
            "grid": out_dir / "comparison.csv",
        }
        merged.to_csv(files["long"], index=False, float_format="%.17g")
        self.model_grid(merged).to_csv(files["grid"], index=False, float_format="%.17g")
        for name, metrics in TABLE_GROUPS.items():
            table = self.subset_table(merged, metrics)
            path = out_dir / f"{name}.txt"
            path.write_text(
                table.to_string(float_format=lambda v: self.float_format % v, na_rep="-") + "\n",
                encoding="utf-8",
            )
            files[name] = path
        models = list(dict.fromkeys(merged["architecture"]))
        logger.info(f"Exported comparison of {len(models)} models to {out_dir}")
        return ReportResult(
            success=True,
            files=files,
            models=models,
            subsets=list(dict.fromkeys(merged["subset"])),
        )
