"""
Tests for ReportService
"""
from pathlib import Path
import sys

import pandas as pd
import pytest

# Add backend to path
sys.path.insert(0, str(Path(__file__).parent.parent / "backend"))

from errors import DataFormatError, MergeError
from services.metrics import MetricsReport
from services.report_service import AVERAGE_LABEL, METRIC_COLUMNS, ReportService


def _row(label, value, aggregate=False, empty=False):
    if empty:
        return MetricsReport(label=label, empty=True, aggregate=aggregate)
    return MetricsReport(
        label=label,
        n=10,
        accuracy=value,
        precision=value / 2,
        recall=value / 3,
        f1=value / 4,
        auc=value / 5,
        aggregate=aggregate,
    )


@pytest.fixture
def service():
    """Create ReportService instance"""
    return ReportService()


def _export(service, tmp_path, arch, values, labels=("CE", "EE")):
    reports = [_row(l, v) for l, v in zip(labels, values)]
    reports.append(_row("All", sum(values) / len(values), aggregate=True))
    out = tmp_path / arch.replace("+", "_plus")
    service.export_metrics(reports, arch, out)
    return out


def test_export_metrics_writes_csv_and_text(service, tmp_path):
    out = _export(service, tmp_path, "dkt", [0.8, 0.6])
    frame = pd.read_csv(out / "metrics.csv")
    assert list(frame["subset"]) == ["CE", "EE", "All"]
    assert frame["architecture"].unique().tolist() == ["dkt"]
    text = (out / "metrics.txt").read_text(encoding="utf-8")
    assert text.startswith("DKT\n")
    assert "0.8000" in text


def test_metrics_csv_keeps_full_precision(service, tmp_path):
    out = tmp_path / "run"
    service.export_metrics([_row("CE", 0.1234567890123456)], "kqn", out)
    run = service.load_run(out)
    assert run.frame.loc[0, "accuracy"] == 0.1234567890123456


def test_merge_orders_models_and_appends_average(service, tmp_path):
    """Models in fixed order; Average over departments only"""
    runs = [
        service.load_run(_export(service, tmp_path, "sakt", [0.9, 0.5])),
        service.load_run(_export(service, tmp_path, "dkt", [0.8, 0.6])),
    ]
    merged = service.merge(runs)
    assert list(dict.fromkeys(merged["architecture"])) == ["dkt", "sakt"]
    assert list(merged[merged["architecture"] == "dkt"]["subset"]) == ["CE", "EE", "All", AVERAGE_LABEL]
    avg = merged[(merged["architecture"] == "sakt") & (merged["subset"] == AVERAGE_LABEL)].iloc[0]
    assert avg["accuracy"] == pytest.approx((0.9 + 0.5) / 2, abs=1e-12)
    assert avg["auc"] == pytest.approx((0.9 / 5 + 0.5 / 5) / 2, abs=1e-12)


def test_average_skips_empty_subsets(service, tmp_path):
    out = tmp_path / "run"
    service.export_metrics(
        [_row("CE", 0.8), _row("ME", 0.0, empty=True), _row("All", 0.8, aggregate=True)], "dkvmn", out
    )
    merged = service.merge([service.load_run(out)])
    avg = merged[merged["subset"] == AVERAGE_LABEL].iloc[0]
    assert avg["accuracy"] == pytest.approx(0.8)


def test_merge_rejects_different_subsets(service, tmp_path):
    a = service.load_run(_export(service, tmp_path, "dkt", [0.8, 0.6]))
    b = service.load_run(_export(service, tmp_path, "kqn", [0.8, 0.6], labels=("CE", "ME")))
    with pytest.raises(MergeError, match="disagree on subset labels"):
        service.merge([a, b])


def test_merge_rejects_repeated_architecture(service, tmp_path):
    a = service.load_run(_export(service, tmp_path / "one", "dkt", [0.8, 0.6]))
    b = service.load_run(_export(service, tmp_path / "two", "dkt", [0.7, 0.6]))
    with pytest.raises(MergeError, match="appears twice"):
        service.merge([a, b])


def test_load_run_without_metrics(service, tmp_path):
    with pytest.raises(DataFormatError, match="run eval first"):
        service.load_run(tmp_path)


def test_export_comparison_writes_paired_tables(service, tmp_path):
    runs = [
        service.load_run(_export(service, tmp_path, arch, [0.8 - i * 0.05, 0.6 + i * 0.05]))
        for i, arch in enumerate(["kqn", "dkt+", "dkt"])
    ]
    result = service.export_comparison(runs, tmp_path / "report")
    assert result.success
    assert result.models == ["dkt", "dkt+", "kqn"]
    assert result.subsets == ["CE", "EE", "All", AVERAGE_LABEL]
    assert set(result.files) == {"long", "grid", "auc_accuracy", "recall_precision_f1"}

    grid = pd.read_csv(result.files["grid"])
    assert list(grid["model"]) == ["DKT", "DKT+", "KQN"]
    assert "CE AUC" in grid.columns and "Average F1" in grid.columns

    first = (tmp_path / "report" / "auc_accuracy.txt").read_text(encoding="utf-8")
    second = (tmp_path / "report" / "recall_precision_f1.txt").read_text(encoding="utf-8")
    assert "AUC" in first and "ACC" in first and "Recall" not in first
    assert "Recall" in second and "Precision" in second and "F1" in second
    assert AVERAGE_LABEL in first and AVERAGE_LABEL in second


def test_long_table_cells_match_run_files(service, tmp_path):
    """Merged cells equal the per-run CSV values"""
    out = _export(service, tmp_path, "dkvmn", [0.71, 0.33])
    run = service.load_run(out)
    merged = service.merge([run])
    for metric in METRIC_COLUMNS:
        for label in ["CE", "EE", "All"]:
            expected = run.frame.set_index("subset").at[label, metric]
            got = merged[merged["subset"] == label].iloc[0][metric]
            assert abs(got - expected) <= 1e-12
