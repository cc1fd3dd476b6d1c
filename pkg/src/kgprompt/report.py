"""Serialising evaluation reports: JSON summary, ROC CSV and ROC figure."""

from __future__ import annotations

import csv
import json
import math
from pathlib import Path

from .protocols import METRIC_NAMES, EvaluationReport, RoundResult
from .plotting import plot_roc

REPORT_FILE = "report.json"
ROC_FILE = "roc.csv"
ROC_PLOT = "roc.png"


def _pct(x) -> float | None:
    """Percentage to 2 decimals; NaN and None become None."""
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return None
    return round(float(x), 2)


def _threshold(x: float):
    """JSON has no infinities; the ROC sentinels are written as strings."""
    return repr(float(x)) if math.isinf(x) else float(x)


def _roc_rows(points) -> list[dict]:
    return [{"threshold": _threshold(p.threshold), "far": float(p.far), "frr": float(p.frr)} for p in points]


def round_to_dict(r: RoundResult) -> dict:
    return {
        "round": r.round,
        "seed": r.seed,
        "threshold": _threshold(r.threshold),
        "dev_eer": _pct(r.dev_eer),
        "metrics": {k: _pct(r.metrics[k]) for k in METRIC_NAMES},
        "train_subjects": list(r.train_subjects),
        "dev_subjects": list(r.dev_subjects),
        "test_subjects": list(r.test_subjects),
    }


def report_to_dict(report: EvaluationReport) -> dict:
    return {
        "protocol": report.protocol,
        "n_rounds": len(report.rounds),
        "metrics": {k: {"mean": _pct(report.mean[k]), "std": _pct(report.std[k])} for k in METRIC_NAMES},
        "rounds": [round_to_dict(r) for r in report.rounds],
        "roc": _roc_rows(report.roc),
    }


def format_summary(report: EvaluationReport) -> str:
    """One ``name mean ± std`` line per metric, percentages to 2 decimals."""
    lines = [f"protocol {report.protocol}, {len(report.rounds)} round(s)"]
    for k in METRIC_NAMES:
        m, s = _pct(report.mean[k]), _pct(report.std[k])
        lines.append(f"{k:<11s} n/a" if m is None else f"{k:<11s} {m:6.2f} ± {s:.2f}")
    return "\n".join(lines)


def write_report(report: EvaluationReport, out_dir, plot: bool = True) -> dict[str, Path]:
    """Write report.json, roc.csv and (optionally) roc.png under `out_dir`."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {"report": out / REPORT_FILE, "roc": out / ROC_FILE}
    paths["report"].write_text(json.dumps(report_to_dict(report), indent=2, allow_nan=False) + "\n",
                               encoding="utf-8")
    with open(paths["roc"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["threshold", "far", "frr"])
        for p in report.roc:
            w.writerow([repr(float(p.threshold)), repr(float(p.far)), repr(float(p.frr))])
    if plot:
        title = f"{report.protocol} ROC (pooled over {len(report.rounds)} round(s))"
        # per-round thresholds differ, so only a single-round report marks its operating point
        marker = report.threshold if len(report.rounds) == 1 else None
        paths["plot"] = plot_roc(report.roc, out / ROC_PLOT, marker, title)
    return paths
