"""Tracking reports: per-waypoint rows, summary statistics and error CDF."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np

DEFAULT_THRESHOLDS_MM = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 8.0, 10.0, float("inf"))

CSV_COLUMNS = (
    ["t"]
    + [f"qd{i}" for i in range(1, 7)]
    + [f"qc{i}" for i in range(1, 7)]
    + [f"qp{i}" for i in range(1, 7)]
    + [f"joint_err{i}" for i in range(1, 7)]
    + ["cart_err_mm"]
)


def tracking_metrics(errors_mm: Sequence[float], thresholds: Sequence[float] = DEFAULT_THRESHOLDS_MM) -> dict:
    """Order statistics of Cartesian errors plus the fraction within each threshold.

    ``sd`` is the population standard deviation.
    """
    e = np.asarray(errors_mm, dtype=float).reshape(-1)
    if e.size == 0:
        raise ValueError("no errors to summarise")
    summary = {
        "max": float(e.max()),
        "min": float(e.min()),
        "mean": float(e.mean()),
        "median": float(np.median(e)),
        "sd": float(e.std()),
        "n": int(e.size),
    }
    cdf = {float(th): float(np.mean(e <= th)) for th in sorted(thresholds)}
    return {"summary": summary, "cdf": cdf}


@dataclass
class TrackingReport:
    qd: np.ndarray
    qc: np.ndarray
    qp: np.ndarray
    cart_err_mm: np.ndarray
    clamped: np.ndarray
    meta: Dict = field(default_factory=dict)

    @property
    def joint_err(self) -> np.ndarray:
        return self.qp - self.qd

    def __len__(self):
        return len(self.cart_err_mm)

    @property
    def n_clamped(self) -> int:
        return int(np.sum(self.clamped))

    def metrics(self, thresholds: Sequence[float] = DEFAULT_THRESHOLDS_MM) -> dict:
        return tracking_metrics(self.cart_err_mm, thresholds)

    @property
    def mean_error_mm(self) -> float:
        return float(np.mean(self.cart_err_mm))

    def rows(self) -> List[list]:
        out = []
        for t in range(len(self)):
            out.append([t, *self.qd[t], *self.qc[t], *self.qp[t], *self.joint_err[t], self.cart_err_mm[t]])
        return out

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows():
            w.writerow([row[0]] + [repr(float(v)) for v in row[1:]])
        return buf.getvalue()
