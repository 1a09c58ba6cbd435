"""MSE / MAE / PSNR reconstruction metrics."""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np

from .diffcore import ContractError


@dataclass
class MetricsReport:
    mse: float
    mae: float
    psnr_db: float

    def listing(self, label: str) -> str:
        psnr = "inf" if math.isinf(self.psnr_db) else f"{self.psnr_db:.2f}"
        return f"{label}: PSNR = {psnr} dB, MAE = {self.mae:.6f}, MSE = {self.mse:.6f}"


def psnr_from_mse(mse: float, peak: float = 1.0) -> float:
    if mse == 0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def eval_metrics(x, x_hat, peak: float = 1.0) -> MetricsReport:
    x = np.asarray(x, dtype=np.float64).ravel()
    x_hat = np.asarray(x_hat, dtype=np.float64).ravel()
    if x.shape != x_hat.shape:
        raise ContractError(f"length mismatch: {x.size} vs {x_hat.size}")
    if peak <= 0:
        raise ContractError("peak must be > 0")
    diff = x - x_hat
    mse = float(np.mean(diff * diff))
    return MetricsReport(mse=mse, mae=float(np.mean(np.abs(diff))), psnr_db=psnr_from_mse(mse, peak))


def _fmt(v: float) -> str:
    return "inf" if math.isinf(v) else repr(v)


def summarize(reports: list[MetricsReport]) -> MetricsReport:
    mse = float(np.mean([r.mse for r in reports]))
    mae = float(np.mean([r.mae for r in reports]))
    psnr = float(np.mean([r.psnr_db for r in reports]))
    return MetricsReport(mse, mae, psnr)


def write_reports(rows, csv_path, json_path, extra_cols=()) -> None:
    """Write ``rows`` of ``(sample_id, *extra, MetricsReport)`` as CSV and JSON."""
    header = ["sample_id", *extra_cols, "psnr_db", "mae", "mse"]
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(header)
        for sid, *extra, rep in rows:
            w.writerow([sid, *extra, _fmt(rep.psnr_db), repr(rep.mae), repr(rep.mse)])
    out = [
        {"sample_id": sid, **dict(zip(extra_cols, extra)), "psnr_db": _fmt(rep.psnr_db), "mae": rep.mae, "mse": rep.mse}
        for sid, *extra, rep in rows
    ]
    with open(json_path, "w") as f:
        json.dump(out, f, indent=1)
        f.write("\n")
