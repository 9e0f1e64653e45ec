import json
import math
from pathlib import Path
from typing import Iterable, List, Union

import pandas as pd

from models.report_model import AblationRow, AuditReport, MetricReport

METRIC_COLUMNS = {"l1_error": "L1 Err.", "l2_error": "L2 Err.", "psnr_db": "PSNR (dB)", "ssim": "SSIM"}


def _format_metric(x, places=5):
    try:
        x_float = float(x)
    except (TypeError, ValueError):
        return str(x)
    if math.isinf(x_float):
        return "inf"
    return f"{x_float:.{places}f}"


def metrics_frame(report: MetricReport) -> pd.DataFrame:
    """Per-sample rows followed by the aggregate row, raw numbers."""
    rows = [s.model_dump() for s in report.samples]
    aggregate = report.aggregate_record()
    aggregate["psnr_db"] = report.psnr_db
    rows.append(aggregate)
    df = pd.DataFrame(rows, columns=["sample", *METRIC_COLUMNS])
    df["region"] = report.region
    df["completer"] = report.completer
    return df


def write_metrics(out_dir: Union[str, Path], report: MetricReport) -> List[Path]:
    """metrics.jsonl (one object per sample, aggregate last) and metrics_summary.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    jsonl = out_dir / "metrics.jsonl"
    with jsonl.open("w") as handle:
        for sample in report.samples:
            handle.write(sample.model_dump_json() + "\n")
        handle.write(json.dumps(report.aggregate_record()) + "\n")
    summary = out_dir / "metrics_summary.csv"
    metrics_frame(report).to_csv(summary, index=False)
    return [jsonl, summary]


def format_metric_df(df: pd.DataFrame) -> pd.DataFrame:
    df = df.copy()
    for column, label in METRIC_COLUMNS.items():
        if column in df.columns:
            places = 2 if column == "psnr_db" else 5
            df[column] = df[column].astype("object").apply(lambda x, p=places: _format_metric(x, p))
            df = df.rename(columns={column: label})
    return df


def markdown_table(df: pd.DataFrame) -> str:
    header = "| " + " | ".join(str(c) for c in df.columns) + " |"
    rule = "|" + "|".join(" --- " for _ in df.columns) + "|"
    body = ["| " + " | ".join(str(v) for v in row) + " |" for row in df.itertuples(index=False)]
    return "\n".join([header, rule, *body]) + "\n"


def ablation_frame(rows: Iterable[AblationRow]) -> pd.DataFrame:
    df = pd.DataFrame([r.model_dump() for r in rows],
                      columns=["description", "dropped", *METRIC_COLUMNS])
    df["dropped"] = df["dropped"].fillna("")
    return df


def write_ablation_table(out_dir: Union[str, Path], rows: Iterable[AblationRow]) -> List[Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    df = ablation_frame(rows)
    csv_path = out_dir / "ablation.csv"
    df.to_csv(csv_path, index=False)
    md_path = out_dir / "ablation.md"
    display = format_metric_df(df.drop(columns=["dropped"])).rename(columns={"description": "Method"})
    md_path.write_text(markdown_table(display))
    return [csv_path, md_path]


def audit_frame(report: AuditReport) -> pd.DataFrame:
    df = pd.DataFrame([r.model_dump() for r in report.results],
                      columns=["check", "kind", "error", "tolerance", "passed", "detail"])
    df["status"] = df["passed"].map({True: "PASS", False: "FAIL"})
    return df


def format_audit_table(report: AuditReport) -> str:
    df = audit_frame(report)
    if df.empty:
        return "no audit checks ran\n"
    df["error"] = df["error"].apply(lambda x: f"{x:.2e}")
    df["tolerance"] = df["tolerance"].apply(lambda x: f"{x:.0e}")
    return df[["status", "kind", "check", "error", "tolerance", "detail"]].to_string(index=False) + "\n"
