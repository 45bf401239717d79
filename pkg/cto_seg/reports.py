"""Aggregation and serialisation of per-image metric reports."""

import csv
import json
import logging
from pathlib import Path
from typing import Any, Dict, Sequence

from .metrics import MetricReport, mean_of

logger = logging.getLogger("cto_seg.reports")

CSV_FIELDS = ("image_id", "dice", "iou", "hd", "pq")
HD_VARIANT = "average"


def summarize(reports: Sequence[MetricReport]) -> Dict[str, Any]:
    """Means over present values plus counts; HD is labelled as the average variant."""
    return {
        "images": len(reports),
        "dice": mean_of([r.dice for r in reports]),
        "iou": mean_of([r.iou for r in reports]),
        "hd": mean_of([r.hd for r in reports]),
        "pq": mean_of([r.pq for r in reports]),
        "hd_variant": HD_VARIANT,
        "hd_missing": sum(1 for r in reports if r.hd is None),
        "pq_empty_convention": sum(1 for r in reports if r.pq_empty_convention),
    }


def write_json(
    summary: Dict[str, Any], reports: Sequence[MetricReport], path: "Path | str"
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {"summary": summary, "per_image": [r.as_dict() for r in reports]}
    path.write_text(json.dumps(payload, indent=2, sort_keys=True), encoding="utf-8")
    logger.debug(f"Wrote {path}")
    return path


def write_csv(reports: Sequence[MetricReport], path: "Path | str") -> Path:
    """One row per image; missing values are empty cells."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as handle:
        writer = csv.DictWriter(handle, fieldnames=CSV_FIELDS)
        writer.writeheader()
        for report in reports:
            row = report.as_dict()
            writer.writerow({k: "" if row[k] is None else row[k] for k in CSV_FIELDS})
    logger.debug(f"Wrote {path}")
    return path


def format_summary(summary: Dict[str, Any]) -> str:
    """Human-readable one-block summary for stdout."""
    lines = [f"images: {summary['images']}"]
    for key in ("dice", "iou", "hd", "pq"):
        value = summary.get(key)
        label = f"{key} ({summary['hd_variant']})" if key == "hd" else key
        lines.append(f"{label}: {'n/a' if value is None else f'{value:.4f}'}")
    return "\n".join(lines) + "\n"
