"""Calibration/holdout fitting of empirical constants."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class CalibratedBound:
    constant: float
    calibration_max: float
    holdout_max: float
    violations: int
    n_calibration: int
    n_holdout: int
    margin: float

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_dict(self) -> dict:
        return dict(self.__dict__, passed=self.passed)


def split(values):
    """First half by index calibrates, second half is held out."""
    v = list(values)
    half = (len(v) + 1) // 2
    return v[:half], v[half:]


def calibrate_upper(values, margin: float = 0.25) -> CalibratedBound:
    """Fit ``(1 + margin) * max`` on the calibration half, count holdout excess."""
    vals = np.asarray(list(values), dtype=float)
    if vals.size < 2:
        raise ValueError("need at least two values to split")
    cal, hold = split(vals)
    cmax = float(np.max(cal))
    const = (1.0 + margin) * cmax
    hold = np.asarray(hold)
    return CalibratedBound(
        const, cmax, float(np.max(hold)), int(np.count_nonzero(hold > const)), len(cal), len(hold), margin
    )


def linear_fit(x, y) -> tuple[float, float, float]:
    """Least-squares ``y = slope * x + intercept``; returns (slope, intercept, R^2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    slope, intercept = np.polyfit(x, y, 1)
    pred = slope * x + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else 1.0
    return float(slope), float(intercept), r2
