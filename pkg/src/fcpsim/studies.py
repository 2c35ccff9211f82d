"""Named experiments built on :func:`fcpsim.harness.run_scenario`.

Study-specific config keys live under ``study:``:

    force-width:  refs (N list), stations (per run)
    tilted-bed:   part (stepwise | comparison), stations
    slippage:     (none; uses slip, control.reference and trajectory)
    width-range:  refs, tail_frac
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as M
from .config import CLOSED_LOOP, OPEN_LOOP, ScenarioConfig
from .harness import RunError, RunRecord, arc_stations, region_labels, run_scenario, write_metrics
from .plant import FLAT, LINEAR_TILT, SLIP_FORCE, SLIP_NONE, BedField, SlipModel

FORCE_WIDTH_REFS = (0.15, 0.20, 0.30, 0.50, 1.00)
N_STATIONS = 140
# deviations beyond this many fit-rmse scales count as off the calibration line
DEVIATION_FACTOR = 3.0


def _run_all(cfgs, workers: int = 1, height_only: bool = False) -> list[RunRecord]:
    if workers > 1 and len(cfgs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(run_scenario, cfgs, [height_only] * len(cfgs)))
    return [run_scenario(c, height_only) for c in cfgs]


def _check(records):
    for r in records:
        if r.error:
            raise RunError(f"run {r.config.name!r} faulted: {r.error}")


def _closed(cfg: ScenarioConfig, ref: float, name: str) -> ScenarioConfig:
    return cfg.replace(name=name, **{"control.mode": CLOSED_LOOP, "control.reference": float(ref),
                                     "control.schedule": None, "control.stepwise": None})


def _write_records(records, out_dir):
    for r in records:
        r.write(Path(out_dir) / r.config.name)


# ---------------------------------------------------------------- force-width

@dataclass
class StationPoints:
    force: np.ndarray
    width: np.ndarray
    reference: np.ndarray
    layer_height: np.ndarray
    region: np.ndarray

    def pairs(self) -> np.ndarray:
        return np.column_stack([self.force, self.width])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["force_N", "width_mm", "ref_N", "h_mm", "region"])
            for row in zip(self.force, self.width, self.reference, self.layer_height, self.region):
                w.writerow([repr(float(row[0])), repr(float(row[1])), repr(float(row[2])),
                            repr(float(row[3])), row[4]])


def station_points(rec: RunRecord, n_stations: int = N_STATIONS) -> StationPoints:
    """Force and width read at uniform arc-length stations of one closed-loop run."""
    log = rec.log
    idx = arc_stations(log, rec.config.trajectory.feed_rate, n_stations)
    labels = region_labels(rec.config, log)
    return StationPoints(log.f_measured[idx].copy(), log.deposited_width[idx].copy(),
                         log.f_reference[idx].copy(), log.layer_height[idx].copy(), labels[idx].copy())


def _concat(parts: list[StationPoints]) -> StationPoints:
    return StationPoints(*(np.concatenate([getattr(p, f) for p in parts])
                           for f in ("force", "width", "reference", "layer_height", "region")))


@dataclass
class ForceWidthResult:
    points: StationPoints
    fit: M.FitResult
    records: list[RunRecord]


def run_force_width_study(cfg: ScenarioConfig, refs=None, n_stations: int | None = None,
                          workers: int = 1, out_dir=None) -> ForceWidthResult:
    refs = list(refs if refs is not None else cfg.study.get("refs", FORCE_WIDTH_REFS))
    n_stations = int(n_stations or cfg.study.get("stations", N_STATIONS))
    if not refs:
        raise ValueError("need at least one force reference")
    cfgs = [_closed(cfg, r, f"{cfg.name}_F{r:g}") for r in refs]
    records = _run_all(cfgs, workers)
    _check(records)
    pts = _concat([station_points(r, n_stations) for r in records])
    fit = M.linear_fit(pts.pairs())
    if out_dir is not None:
        out = Path(out_dir)
        _write_records(records, out)
        pts.to_csv(out / "force_width_points.csv")
        write_metrics(_fit_metrics(fit), CLOSED_LOOP, out / "force_width_fit.csv", out / "force_width_fit.txt")
    return ForceWidthResult(pts, fit, records)


def _fit_metrics(fit: M.FitResult) -> dict:
    return {("fit_slope", "all"): fit.slope, ("fit_intercept", "all"): fit.intercept,
            ("fit_r_squared", "all"): fit.r_squared, ("fit_rmse", "all"): fit.rmse,
            ("n_samples", "all"): float(fit.n)}


# ---------------------------------------------------------------- tilted bed

@dataclass
class StepwiseResult:
    """Deviation from the calibration line, at stations and at every extruding sample."""

    record: RunRecord
    points: StationPoints
    deviation: np.ndarray
    threshold: float
    sample_deviation: np.ndarray
    sample_region: np.ndarray

    @property
    def saturated(self) -> np.ndarray:
        return self.points.region == M.SATURATED

    @property
    def all_saturated_deviate(self) -> bool:
        s = self.saturated
        return bool(s.any() and np.all(self.deviation[s] > self.threshold))

    @property
    def no_linear_deviates(self) -> bool:
        return bool(np.all(self.deviation[~self.saturated] <= self.threshold))

    def sample_counts(self) -> dict[str, tuple[int, int]]:
        """``region -> (samples beyond threshold, samples)`` over the extruding log."""
        out = {}
        for region in (M.LINEAR, M.SATURATED):
            m = self.sample_region == region
            out[region] = (int(np.sum(self.sample_deviation[m] > self.threshold)), int(m.sum()))
        return out


@dataclass
class ComparisonResult:
    flat: RunRecord
    closed: RunRecord
    open: RunRecord
    open_loop_speed: float

    def rmse(self, mode: str, region: str) -> float:
        rec = self.closed if mode == CLOSED_LOOP else self.open
        return rec.metric("width_rmse", region)

    @property
    def linear_ratio(self) -> float:
        return self.rmse(CLOSED_LOOP, "linear") / self.rmse(OPEN_LOOP, "linear")


def run_stepwise_tilt(cfg: ScenarioConfig, n_stations: int | None = None, out_dir=None) -> StepwiseResult:
    """Stepwise reference over a tilted bed; deviation of each station from the calibration line."""
    if cfg.bed.mode != LINEAR_TILT:
        raise ValueError("tilted-bed study needs a linear_tilt bed")
    if not cfg.closed_loop:
        raise ValueError("stepwise study runs closed loop")
    n_stations = int(n_stations or cfg.study.get("stations", N_STATIONS))
    rec = run_scenario(cfg)
    _check([rec])
    pts = station_points(rec, n_stations)
    p = cfg.plant
    dev = np.abs(pts.width - (p.width_slope_a * pts.force + p.width_intercept_b))
    thr = DEVIATION_FACTOR * float(cfg.study.get("fit_rmse", M.CHARACTERIZATION_FIT_RMSE))
    log = rec.log
    ext = log.extruding()
    s_dev = np.abs(log.deposited_width - (p.width_slope_a * log.f_measured + p.width_intercept_b))[ext]
    s_reg = region_labels(cfg, log)[ext]
    res = StepwiseResult(rec, pts, dev, thr, s_dev, s_reg)
    if out_dir is not None:
        out = Path(out_dir)
        rec.write(out / cfg.name)
        pts.to_csv(out / "stepwise_points.csv")
    return res


def run_tilt_comparison(cfg: ScenarioConfig, workers: int = 1, out_dir=None) -> ComparisonResult:
    """Closed loop vs open loop at a fixed reference on a tilted bed.

    The open-loop feed speed is the mean command of a closed-loop run on a
    flat bed at nominal height. Regions are split on layer height only.
    """
    if cfg.bed.mode != LINEAR_TILT:
        raise ValueError("tilted-bed study needs a linear_tilt bed")
    flat_cfg = _closed(cfg, cfg.control.reference, f"{cfg.name}_flat").replace(
        bed=BedField.flat(cfg.plant.nominal_layer_height))
    flat = run_scenario(flat_cfg, True)
    _check([flat])
    speed = flat.metric("cmd_mean")
    closed_cfg = _closed(cfg, cfg.control.reference, f"{cfg.name}_closed")
    open_cfg = cfg.replace(name=f"{cfg.name}_open", **{"control.mode": OPEN_LOOP, "control.wheel_speed": speed})
    closed, opened = _run_all([closed_cfg, open_cfg], workers, height_only=True)
    _check([closed, opened])
    res = ComparisonResult(flat, closed, opened, speed)
    if out_dir is not None:
        _write_records([flat, closed, opened], out_dir)
        summary = {}
        for mode, rec in ((CLOSED_LOOP, closed), (OPEN_LOOP, opened)):
            for region in ("all", "linear"):
                summary[("width_rmse", region, mode)] = rec.metric("width_rmse", region)
        _write_summary(summary, Path(out_dir) / "comparison_summary.csv")
    return res


def run_tilted_bed_study(cfg: ScenarioConfig, workers: int = 1, out_dir=None):
    part = cfg.study.get("part", "comparison")
    if part == "stepwise":
        return run_stepwise_tilt(cfg, out_dir=out_dir)
    if part == "comparison":
        return run_tilt_comparison(cfg, workers, out_dir)
    raise ValueError(f"unknown tilted-bed part {part!r}")


def _write_summary(rows: dict, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["metric", "region", "mode", "value", "unit"])
        for (name, region, mode), value in rows.items():
            unit = "mm" if "width" in name and "deficit" not in name else ("mm/s" if "cmd" in name else "1")
            w.writerow([name, region, mode, repr(float(value)), unit])


# ---------------------------------------------------------------- slippage

@dataclass
class SlippageResult:
    closed: RunRecord
    open: RunRecord
    closed_baseline: RunRecord
    open_baseline: RunRecord

    def deficit(self, mode: str) -> float:
        return (self.closed if mode == CLOSED_LOOP else self.open).metric("width_deficit")


def run_slippage_study(cfg: ScenarioConfig, workers: int = 1, out_dir=None) -> SlippageResult:
    """Closed and open loop under the same slip model, plus no-slip baselines.

    The open-loop slicer width is set to the width the force reference maps
    to, so both modes aim at the same bead.
    """
    if cfg.slip.mode != SLIP_FORCE:
        raise ValueError("slippage study needs slip mode force_dependent")
    p = cfg.plant
    ref = float(cfg.control.reference)
    target = cfg.target_width if cfg.target_width is not None else p.width_slope_a * ref + p.width_intercept_b
    closed = _closed(cfg, ref, f"{cfg.name}_closed")
    opened = cfg.replace(name=f"{cfg.name}_open", **{"control.mode": OPEN_LOOP, "control.line_width": target,
                                                     "control.slicer_layer_height": p.nominal_layer_height})
    no_slip = SlipModel(SLIP_NONE)
    cfgs = [closed, opened, closed.replace(name=f"{cfg.name}_closed_noslip", slip=no_slip),
            opened.replace(name=f"{cfg.name}_open_noslip", slip=no_slip)]
    records = _run_all(cfgs, workers)
    _check(records)
    res = SlippageResult(*records)
    if out_dir is not None:
        _write_records(records, out_dir)
        rows = {}
        for rec in records:
            tag = rec.config.name[len(cfg.name) + 1:]
            rows[("width_deficit", "all", tag)] = rec.metric("width_deficit")
            rows[("width_rmse", "all", tag)] = rec.metric("width_rmse")
            rows[("cmd_mean", "all", tag)] = rec.metric("cmd_mean")
        _write_summary(rows, Path(out_dir) / "slippage_summary.csv")
    return res


# ---------------------------------------------------------------- width range

def run_width_range(cfg: ScenarioConfig, refs=None, tail_frac: float | None = None,
                    workers: int = 1) -> list[tuple[float, float]]:
    """Settled closed-loop width for each reference: mean over the last ``tail_frac`` of the run."""
    refs = list(refs if refs is not None else cfg.study.get("refs", (0.13, 0.2, 0.35, 0.5, 0.75, 1.0)))
    tail_frac = float(tail_frac if tail_frac is not None else cfg.study.get("tail_frac", 0.1))
    records = _run_all([_closed(cfg, r, f"{cfg.name}_F{r:g}") for r in refs], workers)
    _check(records)
    out = []
    for ref, rec in zip(refs, records):
        w = rec.log.deposited_width[rec.log.extruding()]
        k = max(1, int(math.ceil(tail_frac * len(w))))
        out.append((float(ref), float(np.mean(w[-k:]))))
    return out
