"""Masked MAE / RMSE / MAPE, overall and per horizon."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionError


@dataclass(frozen=True)
class SliceMetrics:
    mae: float
    rmse: float
    mape: float  # percent
    count: int

    def as_dict(self) -> dict:
        return {"mae": self.mae, "rmse": self.rmse, "mape": self.mape, "count": self.count}


@dataclass
class MetricsReport:
    """Aggregate plus per-horizon metrics (horizons are 1-based).

    A slice with no masked-in entries is stored as None rather than zero.
    """

    overall: SliceMetrics | None
    horizons: dict[int, SliceMetrics | None] = field(default_factory=dict)
    seconds: float = 0.0

    def horizon(self, h: int) -> SliceMetrics | None:
        return self.horizons[h]

    def json_lines(self, horizons=None, timing: bool = True, **extra) -> list[str]:
        """One JSON object per horizon, then the aggregate (``horizon: "all"``).

        ``timing=False`` drops the wall-clock field so the output is reproducible.
        """
        keys = sorted(self.horizons) if horizons is None else [h for h in horizons if h in self.horizons]
        lines = []
        for h in keys:
            lines.append(_line(h, self.horizons[h], extra))
        tail = dict(extra, seconds=self.seconds) if timing else extra
        lines.append(_line("all", self.overall, tail))
        return lines


def _line(horizon, metrics: SliceMetrics | None, extra: dict) -> str:
    record = dict(extra)
    record["horizon"] = horizon
    if metrics is None:
        record.update(mae=None, rmse=None, mape=None, count=0)
    else:
        record.update(metrics.as_dict())
        if math.isnan(record["mape"]):
            record["mape"] = None
    return json.dumps(record, sort_keys=True)


def slice_metrics(pred: np.ndarray, truth: np.ndarray, mask: np.ndarray) -> SliceMetrics | None:
    count = int(mask.sum())
    if count == 0:
        return None
    diff = (pred - truth)[mask]
    absd = np.abs(diff)
    mae = float(absd.mean())
    scale = float(absd.max())
    # scaled to dodge under/overflow of d*d; max() absorbs the last-ulp rounding
    # when every |diff| is equal (the Jensen bound holds exactly)
    rmse = scale * math.sqrt(float(((absd / scale) ** 2).mean())) if scale > 0 else 0.0
    rmse = max(rmse, mae)
    # MAPE is undefined at zero truth even if the caller's mask admits it
    pct = mask & (truth != 0)
    if pct.any():
        with np.errstate(over="ignore"):
            mape = float(np.abs((pred - truth)[pct] / truth[pct]).mean()) * 100.0
    else:
        mape = float("nan")
    return SliceMetrics(mae, rmse, mape, count)


def evaluate_metrics(pred, truth, mask=None, horizon_axis: int | None = -2,
                     seconds: float = 0.0) -> MetricsReport:
    """Masked metrics; ``mask`` defaults to ``truth != 0``.

    With ``horizon_axis`` set (and at least 2-D inputs) a breakdown per index
    along that axis is included.
    """
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise DimensionError(f"prediction shape {pred.shape} != truth shape {truth.shape}")
    mask = truth != 0 if mask is None else np.asarray(mask, dtype=bool)
    if mask.shape != truth.shape:
        raise DimensionError(f"mask shape {mask.shape} != truth shape {truth.shape}")
    report = MetricsReport(overall=slice_metrics(pred, truth, mask), seconds=seconds)
    if horizon_axis is not None and pred.ndim >= 2:
        p = np.moveaxis(pred, horizon_axis, 0)
        t = np.moveaxis(truth, horizon_axis, 0)
        m = np.moveaxis(mask, horizon_axis, 0)
        for i in range(p.shape[0]):
            report.horizons[i + 1] = slice_metrics(p[i], t[i], m[i])
    return report
