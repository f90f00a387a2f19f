"""Evaluation metrics and the report container.

MAE and RMSE average over every (step, lane) cell. MAPE divides by the
truth, so near-zero truth cells (|truth| < MAPE_EPSILON physical units)
are masked out and counted; an all-masked MAPE is reported as undefined
rather than zero.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError

MAPE_EPSILON = 1e-3


@dataclass
class EvalReport:
    mae: float
    rmse: float
    mape: float | None          # percent, None when every cell is masked
    masked_count: int
    used_count: int
    constraint_residual: float | None = None
    per_horizon: dict[int, "EvalReport"] = field(default_factory=dict)

    def to_dict(self) -> dict:
        out = {
            "mae": self.mae,
            "rmse": self.rmse,
            "mape_percent": self.mape,
            "masked_count": self.masked_count,
            "used_count": self.used_count,
        }
        if self.constraint_residual is not None:
            out["constraint_residual"] = self.constraint_residual
        if self.per_horizon:
            out["per_horizon"] = {str(h): r.to_dict() for h, r in self.per_horizon.items()}
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "EvalReport":
        per = {int(h): cls.from_dict(r) for h, r in data.get("per_horizon", {}).items()}
        return cls(mae=data["mae"], rmse=data["rmse"], mape=data.get("mape_percent"),
                   masked_count=data["masked_count"], used_count=data["used_count"],
                   constraint_residual=data.get("constraint_residual"), per_horizon=per)


def evaluate(pred: np.ndarray, truth: np.ndarray,
             mask_epsilon: float = MAPE_EPSILON) -> EvalReport:
    """MAE / RMSE / MAPE over aligned arrays of any matching shape."""
    pred = np.asarray(pred, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if pred.shape != truth.shape:
        raise ShapeError(f"prediction {pred.shape} vs truth {truth.shape}")
    diff = pred - truth
    mae = float(np.mean(np.abs(diff)))
    rmse = float(np.sqrt(np.mean(diff * diff)))
    usable = np.abs(truth) >= mask_epsilon
    used = int(usable.sum())
    masked = int(truth.size - used)
    if used == 0:
        mape = None
    else:
        mape = float(np.mean(np.abs(diff[usable] / truth[usable])) * 100.0)
    return EvalReport(mae=mae, rmse=rmse, mape=mape,
                      masked_count=masked, used_count=used)
