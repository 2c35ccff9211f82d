"""Tracking cost, force-width regression, width RMSE and regime segmentation."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

LINEAR = "linear"
SATURATED = "saturated"

# scatter of the published force-width fit (mm); reference scale for outlier tests
CHARACTERIZATION_FIT_RMSE = 9.24e-3


class MetricError(ValueError):
    """Metric undefined for the given data."""


def column(samples, name: str) -> np.ndarray:
    """One field of a sample log as a float array.

    ``samples`` is either a :class:`~fcpsim.harness.SampleLog` (columnar) or a
    sequence of :class:`~fcpsim.plant.ForceSample`. Missing references become NaN.
    """
    arr = getattr(samples, name, None)
    if isinstance(arr, np.ndarray):
        return arr
    vals = [getattr(s, name) for s in samples]
    return np.array([np.nan if v is None else v for v in vals], dtype=float)


def tracking_cost_J(samples) -> float:
    """Root-mean-square force tracking error (N) over all samples."""
    f_ref = column(samples, "f_reference")
    if f_ref.size == 0:
        raise MetricError("no samples")
    if np.any(np.isnan(f_ref)):
        raise MetricError("tracking cost is meaningless for an open-loop log (no force reference)")
    err = f_ref - column(samples, "f_measured")
    return float(math.sqrt(np.sum(err * err) / err.size))


@dataclass(frozen=True)
class FitResult:
    slope: float
    intercept: float
    r_squared: float
    rmse: float
    n: int

    def predict(self, force):
        return self.slope * np.asarray(force, dtype=float) + self.intercept


def linear_fit(points: Sequence[tuple[float, float]]) -> FitResult:
    """Least-squares width = slope * force + intercept (vertical residuals)."""
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 2:
        raise MetricError("need at least two (force, width) points")
    f, w = pts[:, 0], pts[:, 1]
    fm, wm = f.mean(), w.mean()
    sxx = float(np.sum((f - fm) ** 2))
    if sxx <= 1e-300 or np.ptp(f) == 0:
        raise MetricError("degenerate abscissa: all forces equal")
    slope = float(np.sum((f - fm) * (w - wm)) / sxx)
    intercept = float(wm - slope * fm)
    resid = w - (slope * f + intercept)
    ss_res = float(np.sum(resid ** 2))
    ss_tot = float(np.sum((w - wm) ** 2))
    r2 = 1.0 if ss_tot == 0 else 1.0 - ss_res / ss_tot
    r2 = min(1.0, max(0.0, r2))
    return FitResult(slope, intercept, r2, math.sqrt(ss_res / len(pts)), len(pts))


def saturated_flags(layer_height, target_width, nominal_layer_height: float, nozzle_diameter: float,
                    height_frac: float = 0.5, width_frac: float = 1.5) -> np.ndarray:
    h = np.asarray(layer_height, dtype=float)
    w = np.broadcast_to(np.asarray(target_width, dtype=float), h.shape)
    return (h < height_frac * nominal_layer_height) & (w > width_frac * nozzle_diameter)


def segment_regions(samples, params, target_width=None) -> np.ndarray:
    """Label each sample ``"linear"`` or ``"saturated"``.

    ``target_width`` defaults to the width the force reference maps to on the
    plant's calibration line.
    """
    h = column(samples, "layer_height")
    if target_width is None:
        f_ref = column(samples, "f_reference")
        target_width = params.width_slope_a * np.nan_to_num(f_ref) + params.width_intercept_b
    sat = saturated_flags(h, target_width, params.nominal_layer_height, params.nozzle_diameter,
                          params.saturation_height_frac, params.saturation_width_frac)
    return np.where(sat, SATURATED, LINEAR)


def width_rmse(samples, target_w: float, mask=None) -> float:
    """RMSE (mm) of deposited width against ``target_w``.

    ``mask`` is a boolean array or an array of region labels; with labels, only
    ``"linear"`` samples are kept.
    """
    w = column(samples, "deposited_width")
    if mask is not None:
        m = np.asarray(mask)
        if m.dtype != bool:
            m = m == LINEAR
        w = w[m]
    if w.size == 0:
        raise MetricError("empty selection")
    return float(math.sqrt(np.mean((w - target_w) ** 2)))


def combine_rmse(parts: Sequence[tuple[float, int]]) -> float:
    """Pool per-region RMSEs weighted by their sample counts."""
    n = sum(k for _, k in parts)
    if n == 0:
        raise MetricError("no samples")
    return math.sqrt(sum(r * r * k for r, k in parts) / n)
