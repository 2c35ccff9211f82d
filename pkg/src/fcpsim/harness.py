"""Scenario runner: trajectory -> controller -> plant -> log -> metrics."""

from __future__ import annotations

import csv
import hashlib
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import metrics as M
from .config import CLOSED_LOOP, ConfigError, ScenarioConfig, dump_config
from .controller import ForceController, open_loop_step
from .planner import (
    FEEDFORWARD,
    SampledPath,
    SlicerParams,
    Trajectory,
    annotate_feedforward,
    annotate_force_reference,
    feedforward_wheel_speed,
    make_snake,
    make_star_infill,
    stepwise_schedule,
)
from .plant import (
    BedError,
    Plant,
    PlantFault,
    PlantState,
    bed_height,
    steady_state,
    wheel_speed_for_force,
)

LOG_HEADER = ("t_s", "x_mm", "y_mm", "h_mm", "Fref_N", "Fmeas_N", "cmd_mms", "eff_mms", "width_mm", "torque_Nmm")
TRAJ_HEADER = ("t_s", "x_mm", "y_mm", "h_mm", "annotation_kind", "annotation_value")
METRICS_HEADER = ("metric", "region", "mode", "value", "unit")

# log column name -> SampleLog attribute
_COLUMNS = dict(zip(LOG_HEADER, ("t", "x", "y", "layer_height", "f_reference", "f_measured",
                                 "wheel_speed_cmd", "wheel_speed_effective", "deposited_width", "torque")))

DATA_DIR = Path(__file__).parent / "data"


class RunError(RuntimeError):
    pass


def default_star_polygon() -> list[tuple[float, float]]:
    return read_polygon(DATA_DIR / "star_polygon.csv")


def read_polygon(path) -> list[tuple[float, float]]:
    with open(path, newline="") as fh:
        rows = [r for r in csv.reader(fh) if r and not r[0].startswith("#")]
    if rows and not _is_number(rows[0][0]):
        rows = rows[1:]
    try:
        return [(float(r[0]), float(r[1])) for r in rows]
    except (ValueError, IndexError) as exc:
        raise ConfigError(f"malformed polygon file {path}: {exc}") from exc


def _is_number(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


# ---------------------------------------------------------------- trajectory

def build_geometry(cfg: ScenarioConfig) -> Trajectory:
    """Unannotated toolpath; identical for both control modes."""
    ts = cfg.trajectory
    h0 = cfg.plant.nominal_layer_height
    if ts.kind == "snake":
        traj = make_snake(ts.line_length, ts.n_lines, ts.spacing, ts.origin, ts.feed_rate, h0)
    else:
        poly = ts.polygon if ts.polygon is not None else default_star_polygon()
        traj = make_star_infill(poly, ts.line_spacing, ts.feed_rate, h0)
    return traj.repeated(int(ts.layers))


def reference_schedule(cfg: ScenarioConfig, n_passes: int):
    c = cfg.control
    if c.schedule is not None:
        return [((int(lo), int(hi)), float(v)) for lo, hi, v in c.schedule]
    if c.stepwise is not None:
        s = c.stepwise
        return stepwise_schedule(n_passes, float(s["start"]), float(s["increment"]), int(s["every"]))
    return [((1, n_passes), float(c.reference))]


def open_loop_speed(cfg: ScenarioConfig) -> float:
    c = cfg.control
    if c.wheel_speed is not None:
        return float(c.wheel_speed)
    sp = SlicerParams(nozzle_diameter=cfg.plant.nozzle_diameter, line_width=c.line_width,
                      layer_height=c.slicer_layer_height, feed_rate=cfg.trajectory.feed_rate,
                      filament_diameter=cfg.plant.filament_diameter)
    return feedforward_wheel_speed(sp)


def build_trajectory(cfg: ScenarioConfig) -> Trajectory:
    traj = build_geometry(cfg)
    if cfg.closed_loop:
        return annotate_force_reference(traj, reference_schedule(cfg, traj.n_passes))
    return annotate_feedforward(traj, open_loop_speed(cfg))


def geometry_hash(traj: Trajectory) -> str:
    h = hashlib.sha256()
    for a in (traj.x, traj.y, traj.t, traj.pass_id, traj.extruding):
        h.update(np.ascontiguousarray(a).tobytes())
    return h.hexdigest()


def sampled_heights(cfg: ScenarioConfig, sp: SampledPath) -> np.ndarray:
    """Layer height under every sample, from the bed field."""
    try:
        return np.array([bed_height(cfg.bed, x, y) for x, y in zip(sp.x, sp.y)])
    except BedError as exc:
        raise ConfigError(f"bed field does not cover the toolpath: {exc}") from exc


def write_trajectory_csv(traj: Trajectory, path) -> None:
    kind = traj.annotation_kind or ""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(TRAJ_HEADER)
        for i in range(len(traj.x)):
            ann = "" if traj.annotation is None else repr(float(traj.annotation[i]))
            w.writerow([repr(float(traj.t[i])), repr(float(traj.x[i])), repr(float(traj.y[i])),
                        repr(float(traj.layer_height[i])), kind, ann])


# ---------------------------------------------------------------- log

@dataclass
class SampleLog:
    """Columnar force-sample log. ``f_reference`` is NaN throughout for open loop."""

    t: np.ndarray
    x: np.ndarray
    y: np.ndarray
    layer_height: np.ndarray
    f_reference: np.ndarray
    f_measured: np.ndarray
    wheel_speed_cmd: np.ndarray
    wheel_speed_effective: np.ndarray
    deposited_width: np.ndarray
    torque: np.ndarray

    @classmethod
    def empty(cls, n: int) -> "SampleLog":
        return cls(*(np.full(n, np.nan) for _ in range(10)))

    def __len__(self) -> int:
        return len(self.t)

    def truncated(self, n: int) -> "SampleLog":
        return SampleLog(*(getattr(self, a)[:n] for a in _COLUMNS.values()))

    def select(self, mask) -> "SampleLog":
        return SampleLog(*(getattr(self, a)[mask] for a in _COLUMNS.values()))

    @property
    def closed_loop(self) -> bool:
        return len(self) > 0 and not np.all(np.isnan(self.f_reference))

    def extruding(self) -> np.ndarray:
        """Deposition mask recoverable from the log alone: nonzero reference or command."""
        if self.closed_loop:
            return self.f_reference > 0
        return self.wheel_speed_cmd > 0

    def to_csv(self, path) -> None:
        cols = [getattr(self, a) for a in _COLUMNS.values()]
        with open(path, "w") as fh:
            fh.write(",".join(LOG_HEADER) + "\n")
            for row in zip(*cols):
                fh.write(",".join("" if v != v else repr(float(v)) for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "SampleLog":
        with open(path, newline="") as fh:
            r = csv.reader(fh)
            header = next(r, None)
            if header is None or tuple(header) != LOG_HEADER:
                raise ValueError(f"{path}: not a force-sample log")
            rows = list(r)
        data = np.array([[float(v) if v != "" else np.nan for v in row] for row in rows], dtype=float)
        data = data.reshape(len(rows), len(LOG_HEADER))
        return cls(*(data[:, i].copy() for i in range(len(LOG_HEADER))))


# ---------------------------------------------------------------- metrics

def target_width(cfg: ScenarioConfig, log: SampleLog) -> np.ndarray:
    """Per-sample width target (mm)."""
    if cfg.target_width is not None:
        return np.full(len(log), float(cfg.target_width))
    if log.closed_loop:
        return cfg.plant.width_slope_a * np.nan_to_num(log.f_reference) + cfg.plant.width_intercept_b
    return np.full(len(log), float(cfg.control.line_width))


def region_labels(cfg: ScenarioConfig, log: SampleLog, height_only: bool = False) -> np.ndarray:
    """``linear``/``saturated`` per sample.

    ``height_only`` drops the width condition, i.e. every sample printed in a
    gap under the saturation height counts as saturated.
    """
    p = cfg.plant
    tw = np.full(len(log), np.inf) if height_only else target_width(cfg, log)
    return M.segment_regions(log, p, tw)


def compute_metrics(cfg: ScenarioConfig, log: SampleLog, height_only: bool = False) -> dict[tuple[str, str], float]:
    """Metrics keyed by ``(metric, region)``; everything derives from the log."""
    out: dict[tuple[str, str], float] = {}
    if len(log) == 0:
        return out
    ext = log.extruding()
    if log.closed_loop and ext.any():
        out[("J", "all")] = M.tracking_cost_J(log.select(ext))
        out[("J_rel", "all")] = out[("J", "all")] / max(float(np.max(log.f_reference)), 1e-300)
    tw = target_width(cfg, log)
    labels = region_labels(cfg, log, height_only)
    w = log.deposited_width
    for region, mask in (("all", ext), ("linear", ext & (labels == M.LINEAR)),
                         ("saturated", ext & (labels == M.SATURATED))):
        n = int(mask.sum())
        out[("n_samples", region)] = float(n)
        if n:
            out[("width_rmse", region)] = float(math.sqrt(np.mean((w[mask] - tw[mask]) ** 2)))
            out[("width_mean", region)] = float(np.mean(w[mask]))
            out[("width_deficit", region)] = float(np.mean((tw[mask] - w[mask]) / tw[mask]))
    if ext.any():
        out[("cmd_mean", "all")] = float(np.mean(log.wheel_speed_cmd[ext]))
        out[("force_mean", "all")] = float(np.mean(log.f_measured[ext]))
    return out


_UNITS = {"J": "N", "J_rel": "1", "n_samples": "1", "width_rmse": "mm", "width_mean": "mm",
          "width_deficit": "1", "cmd_mean": "mm/s", "force_mean": "N", "fit_slope": "mm/N",
          "fit_intercept": "mm", "fit_r_squared": "1", "fit_rmse": "mm", "wall_clock": "s"}


def write_metrics(metrics: dict[tuple[str, str], float], mode: str, path_csv, path_txt=None) -> None:
    with open(path_csv, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for (name, region), value in metrics.items():
            w.writerow([name, region, mode, repr(float(value)), _UNITS.get(name, "")])
    if path_txt is not None:
        with open(path_txt, "w") as fh:
            for (name, region), value in metrics.items():
                fh.write(f"{name}.{region}={float(value)!r}\n")


# ---------------------------------------------------------------- run

@dataclass
class RunRecord:
    config: ScenarioConfig
    log: SampleLog
    metrics: dict[tuple[str, str], float]
    wall_clock: float
    error: str | None = None
    geometry: str = ""
    extra: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.error is None

    @property
    def mode(self) -> str:
        return self.config.control.mode

    def metric(self, name: str, region: str = "all") -> float:
        return self.metrics[(name, region)]

    def write(self, out_dir, stem: str = "run") -> Path:
        """Write config snapshot, log and metrics; a faulted log gets a ``.partial`` suffix."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / f"{stem}_config.yaml").write_text(dump_config(self.config))
        log_path = out / f"{stem}_log.csv"
        if self.error:
            log_path = log_path.with_name(log_path.name + ".partial")
            (out / f"{stem}_error.txt").write_text(self.error + "\n")
        self.log.to_csv(log_path)
        write_metrics(self.metrics, self.mode, out / f"{stem}_metrics.csv", out / f"{stem}_metrics.txt")
        return log_path


def _initial_state(cfg: ScenarioConfig, sp: SampledPath, h0: float) -> tuple[PlantState, float]:
    """Plant state and matching wheel speed at t = 0."""
    if cfg.initial_state == "rest":
        return PlantState(), 0.0
    first = float(sp.annotation[0])
    if cfg.closed_loop:
        v0 = wheel_speed_for_force(first, h0, sp.feed_rate, cfg.plant)
    else:
        v0 = first
    st = steady_state(v0, h0, sp.feed_rate, cfg.plant, cfg.slip)
    return st, v0


def simulate(cfg: ScenarioConfig, traj: Trajectory | None = None) -> tuple[SampleLog, str | None, Trajectory]:
    """Fixed-step closed/open-loop loop. Returns the (possibly partial) log and an error marker."""
    traj = traj if traj is not None else build_trajectory(cfg)
    dt = cfg.sample_period
    sp = traj.sample(dt)
    h = sampled_heights(cfg, sp)
    n = len(sp)
    p = cfg.plant
    state, v0 = _initial_state(cfg, sp, float(h[0]))
    plant = Plant(p, cfg.slip, seed=cfg.seed, state=state)
    closed = cfg.closed_loop
    if closed:
        ctl = ForceController(cfg.control.gains, -p.max_wheel_speed, p.max_wheel_speed)
        if cfg.initial_state == "steady" and cfg.control.gains.ki > 0:
            ctl.state.e_i = v0 / cfg.control.gains.ki
    log = SampleLog.empty(n)
    ann = sp.annotation
    f_prev = state.f_measured
    feed = sp.feed_rate
    error = None
    k = 0
    try:
        for k in range(n):
            a = float(ann[k])
            if closed and not sp.extruding[k]:
                # extruder idles on travel moves; controller state is held
                v = 0.0
            elif closed:
                v = ctl.step(a, f_prev, float(sp.t[k]))
            else:
                v = open_loop_step(a)
            s = plant.step(v, float(h[k]), feed, dt, bool(sp.extruding[k]))
            f_prev = s.f_measured
            log.t[k] = s.t
            log.x[k] = sp.x[k]
            log.y[k] = sp.y[k]
            log.layer_height[k] = h[k]
            if closed:
                log.f_reference[k] = a
            log.f_measured[k] = s.f_measured
            log.wheel_speed_cmd[k] = v
            log.wheel_speed_effective[k] = s.wheel_speed_effective
            log.deposited_width[k] = s.deposited_width
            log.torque[k] = s.torque
        k = n
    except (PlantFault, ValueError, ArithmeticError) as exc:
        error = f"{type(exc).__name__} at step {k}: {exc}"
        log = log.truncated(k)
    return log, error, traj


def run_scenario(cfg: ScenarioConfig, height_only_regions: bool = False) -> RunRecord:
    t0 = time.perf_counter()
    log, error, traj = simulate(cfg)
    try:
        # a faulted log may hold huge but finite values; their metrics go to inf quietly
        with np.errstate(over="ignore", invalid="ignore"):
            metrics = compute_metrics(cfg, log, height_only_regions)
    except M.MetricError:
        metrics = {}
    return RunRecord(config=cfg, log=log, metrics=metrics, wall_clock=time.perf_counter() - t0,
                     error=error, geometry=geometry_hash(traj))


def recompute_metrics(cfg: ScenarioConfig, log_path, height_only: bool = False) -> dict:
    return compute_metrics(cfg, SampleLog.from_csv(log_path), height_only)


def arc_stations(log: SampleLog, feed_rate: float, n_stations: int = 140) -> np.ndarray:
    """Sample indices at ``n_stations`` uniform arc-length stations (bin centres)."""
    n = len(log)
    if n == 0:
        raise RunError("empty log")
    dt = float(log.t[1] - log.t[0]) if n > 1 else float(log.t[0])
    length = n * dt * feed_rate
    s = (np.arange(n_stations) + 0.5) * length / n_stations
    return np.minimum((s / (feed_rate * dt)).astype(int), n - 1)
