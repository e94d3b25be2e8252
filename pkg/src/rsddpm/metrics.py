"""Segmentation and restoration metrics plus the CSV report format.

Mask metrics threshold at 0 because masks are encoded {-1,+1}: zero is the
symmetric decision boundary (probability one half). Empty-union-empty pairs
score 1.0 for both IoU and Dice; two predictors that agree there is nothing
to find should not be punished by a 0/0 convention.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

CSV_HEADER = "method,split,iou,dice,mse,psnr,n_images"


def _counts(pred: np.ndarray, true: np.ndarray):
    if pred.shape != true.shape:
        raise ValueError(f"metrics: shape mismatch {pred.shape} vs {true.shape}")
    p = pred > 0
    t = true > 0
    inter = int(np.count_nonzero(p & t))
    return inter, int(np.count_nonzero(p)), int(np.count_nonzero(t))


def iou(pred: np.ndarray, true: np.ndarray) -> float:
    inter, np_, nt = _counts(pred, true)
    union = np_ + nt - inter
    return 1.0 if union == 0 else inter / union


def dice(pred: np.ndarray, true: np.ndarray) -> float:
    inter, np_, nt = _counts(pred, true)
    return 1.0 if np_ + nt == 0 else 2.0 * inter / (np_ + nt)


def mse(pred: np.ndarray, true: np.ndarray) -> float:
    if pred.shape != true.shape:
        raise ValueError(f"metrics: shape mismatch {pred.shape} vs {true.shape}")
    d = pred.astype(np.float64) - true.astype(np.float64)
    return float(np.mean(d * d))


def psnr(pred: np.ndarray, true: np.ndarray, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; +inf for identical inputs."""
    m = mse(pred, true)
    if m == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / m)


@dataclass
class MetricReport:
    """Aggregate means over one method/split plus the per-image values."""

    method: str
    split: str
    iou: float
    dice: float
    mse: float
    psnr: float
    n_images: int
    per_image: list

    def row(self) -> str:
        return (f"{self.method},{self.split},{self.iou:.8f},{self.dice:.8f},"
                f"{self.mse:.8e},{self.psnr},{self.n_images}")


def evaluate(method: str, split: str, preds, trues, peak: float = 2.0) -> MetricReport:
    """Score a list of predictions against targets, one image at a time.

    ``peak`` is the signal range for PSNR: 2 for {-1,+1}-encoded masks,
    1 for [0,1] images.
    """
    if len(preds) != len(trues):
        raise ValueError(f"evaluate: {len(preds)} predictions vs {len(trues)} targets")
    if not preds:
        raise ValueError("evaluate: empty input")
    per = []
    for p, t in zip(preds, trues):
        per.append({"iou": iou(p, t), "dice": dice(p, t), "mse": mse(p, t),
                    "psnr": psnr(p, t, peak)})
    def agg(key):
        vals = [r[key] for r in per]
        return math.inf if any(math.isinf(v) for v in vals) else sum(vals) / len(vals)
    return MetricReport(method=method, split=split, iou=agg("iou"), dice=agg("dice"),
                        mse=agg("mse"), psnr=agg("psnr"), n_images=len(per), per_image=per)


def write_csv(path, reports) -> None:
    """Aggregate metrics, one row per method; header is part of the format."""
    with open(path, "w", encoding="utf-8") as f:
        f.write(CSV_HEADER + "\n")
        for r in reports:
            f.write(r.row() + "\n")


def read_csv(path) -> list:
    """Parse a metrics CSV back into dict rows (floats where possible)."""
    with open(path, "r", encoding="utf-8") as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    if not lines or lines[0] != CSV_HEADER:
        raise ValueError(f"{path}: missing or wrong metrics header")
    cols = CSV_HEADER.split(",")
    rows = []
    for ln in lines[1:]:
        parts = ln.split(",")
        if len(parts) != len(cols):
            raise ValueError(f"{path}: malformed row {ln!r}")
        row = dict(zip(cols, parts))
        for k in ("iou", "dice", "mse", "psnr"):
            row[k] = float(row[k])
        row["n_images"] = int(row["n_images"])
        rows.append(row)
    return rows
