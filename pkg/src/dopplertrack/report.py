"""Report rendering: aligned text tables, CSV/JSON, and figure files.

Every report path writes the same table in three delimited forms
(aligned text, CSV, JSON) and renders a small matplotlib figure next to
them. Metric values are reported x100 with two decimals.
"""

from __future__ import annotations

import csv
import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .metrics import EvalReport

METRIC_COLUMNS = ["AS", "MOTSA", "MOTSP", "SMOTSA"]

__all__ = [
    "METRIC_COLUMNS",
    "metric_rows",
    "format_table",
    "write_table",
    "write_eval_report",
    "write_loss_curve",
]


def metric_rows(reports: list[tuple[str, EvalReport]], scale_100: bool = True) -> list[dict]:
    rows = []
    for label, report in reports:
        table = report.as_dict(scale_100=scale_100)
        rows.append({"Method": label, **{c: table[c] for c in METRIC_COLUMNS}})
    return rows


def format_table(rows: list[dict], columns: list[str] | None = None) -> str:
    """Space-aligned text table with two-decimal floats."""
    if not rows:
        return "(empty table)\n"
    columns = columns or list(rows[0].keys())

    def fmt(v) -> str:
        return f"{v:.2f}" if isinstance(v, float) else str(v)

    cells = [[fmt(r.get(c, "")) for c in columns] for r in rows]
    widths = [max(len(c), *(len(row[i]) for row in cells)) for i, c in enumerate(columns)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(columns, widths))]
    lines.append("  ".join("-" * w for w in widths))
    for row in cells:
        lines.append("  ".join(c.ljust(w) for c, w in zip(row, widths)))
    return "\n".join(lines) + "\n"


def _figure_for_rows(rows: list[dict], title: str, path: Path) -> None:
    labels = [r["Method"] for r in rows]
    x = range(len(METRIC_COLUMNS))
    width = max(0.8 / max(len(rows), 1), 0.1)
    fig, ax = plt.subplots(figsize=(7, 4))
    for i, row in enumerate(rows):
        vals = [row[c] for c in METRIC_COLUMNS]
        ax.bar([xi + i * width for xi in x], vals, width=width, label=str(labels[i]))
    ax.set_xticks([xi + width * (len(rows) - 1) / 2 for xi in x])
    ax.set_xticklabels(METRIC_COLUMNS)
    ax.set_ylabel("score (x100)")
    ax.set_ylim(0, 105)
    ax.set_title(title)
    if len(rows) > 1:
        ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def write_table(
    out_dir: str | Path,
    stem: str,
    rows: list[dict],
    title: str,
    emit_json: bool = True,
) -> dict[str, Path]:
    """Write <stem>.txt/.csv/.json/.png under out_dir; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "txt": out_dir / f"{stem}.txt",
        "csv": out_dir / f"{stem}.csv",
        "json": out_dir / f"{stem}.json",
        "png": out_dir / f"{stem}.png",
    }
    paths["txt"].write_text(format_table(rows))
    with open(paths["csv"], "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()) if rows else ["Method"])
        writer.writeheader()
        writer.writerows(rows)
    if emit_json:
        paths["json"].write_text(json.dumps(rows, indent=2))
    _figure_for_rows(rows, title, paths["png"])
    return paths


def write_eval_report(
    out_dir: str | Path,
    reports: list[tuple[str, EvalReport]],
    stem: str = "eval_report",
    scale_100: bool = True,
) -> dict[str, Path]:
    rows = metric_rows(reports, scale_100=scale_100)
    paths = write_table(out_dir, stem, rows, "tracking metrics")
    detail = {
        label: report.as_dict(scale_100=scale_100) for label, report in reports
    }
    detail_path = Path(out_dir) / f"{stem}_detail.json"
    detail_path.write_text(json.dumps(detail, indent=2))
    paths["detail"] = detail_path
    return paths


def write_loss_curve(out_dir: str | Path, curve: list[float], parts: dict[str, list[float]] | None = None) -> dict[str, Path]:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "training_log.csv"
    with open(csv_path, "w", newline="") as fh:
        names = ["epoch", "total", *(parts or {})]
        writer = csv.writer(fh)
        writer.writerow(names)
        for i, total in enumerate(curve):
            writer.writerow([i, total, *[parts[k][i] for k in (parts or {})]])
    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(curve, label="total")
    for name, series in (parts or {}).items():
        ax.plot(series, label=name, alpha=0.7)
    ax.set_xlabel("epoch")
    ax.set_ylabel("loss")
    ax.set_yscale("log")
    ax.legend(fontsize=8)
    fig.tight_layout()
    png_path = out_dir / "loss_curve.png"
    fig.savefig(png_path, dpi=120)
    plt.close(fig)
    return {"csv": csv_path, "png": png_path}
