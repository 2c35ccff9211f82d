"""Gain tuning by bounded coordinate pattern search on the simulated tracking cost.

Each iteration polls ``x +/- step_i * e_i`` for every gain, in a fixed order.
The best improving candidate (first in order on ties) becomes the incumbent
and its step doubles; if none improves, every step halves. The lag ``d`` is
not searched continuously: the search runs once per value in ``d_values``,
sharing the evaluation budget.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .config import ConfigError, ScenarioConfig, load_scenario_ref, write_gains
from .controller import REFERENCE_GAINS, ControllerGains
from .harness import simulate
from . import metrics as M

GAIN_NAMES = ("kp", "ki", "kd", "kdd")
D_VALUES = (1, 5, 10, 20)
INITIAL_STEP_FRAC = 0.25
TRACE_HEADER = ("eval", "d", "kp", "ki", "kd", "kdd", "J", "accepted", "best_J")

Objective = Callable[[tuple[float, float, float, float], int], float]


class TuneError(ValueError):
    pass


def default_bounds(base: ControllerGains = REFERENCE_GAINS) -> dict[str, tuple[float, float]]:
    return {n: (0.0, 10.0 * v) for n, v in zip(GAIN_NAMES, base.as_vector())}


@dataclass
class TuneSpec:
    scenario: ScenarioConfig | None
    bounds: dict[str, tuple[float, float]] = field(default_factory=default_bounds)
    budget: int = 200
    seed: int = 0
    initial_gains: ControllerGains | None = None
    d_values: tuple[int, ...] = D_VALUES
    tol: float = 1e-3
    workers: int = 1
    objective: Objective | None = None  # replaces the simulator, e.g. for surrogate checks
    also: tuple[ScenarioConfig, ...] = ()  # J is averaged over scenario + also

    def __post_init__(self):
        if self.budget < 1:
            raise TuneError("budget must be >= 1")
        if not self.d_values or any(int(d) != d or d < 1 for d in self.d_values):
            raise TuneError("d_values must be integers >= 1")
        missing = set(GAIN_NAMES) - set(self.bounds)
        if missing:
            raise TuneError(f"bounds missing for {sorted(missing)}")
        for n in GAIN_NAMES:
            lo, hi = self.bounds[n]
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi or lo < 0:
                raise TuneError(f"empty or invalid feasible box for {n}: [{lo}, {hi}]")
        if not self.tol > 0:
            raise TuneError("tol must be positive")
        if self.objective is None:
            if self.scenario is None:
                raise TuneError("need a scenario or an objective")
            if not all(c.closed_loop for c in (self.scenario, *self.also)):
                raise TuneError("tuning needs closed-loop scenarios")

    @classmethod
    def from_config(cls, cfg: ScenarioConfig) -> "TuneSpec":
        t = cfg.tune
        if t.initial == "reference":
            init = REFERENCE_GAINS
        elif t.initial == "config":
            init = cfg.control.gains
        else:
            raise ConfigError(f"tune.initial must be reference or config, got {t.initial!r}")
        bounds = default_bounds()
        if t.bounds:
            bounds.update({k: tuple(v) for k, v in t.bounds.items()})
        also = tuple(load_scenario_ref(a) for a in t.also)
        return cls(scenario=cfg, bounds=bounds, budget=int(t.budget), seed=int(t.seed), initial_gains=init,
                   d_values=tuple(int(d) for d in t.d_values), tol=float(t.tol), workers=int(t.workers),
                   also=also)

    @property
    def lo(self) -> np.ndarray:
        return np.array([self.bounds[n][0] for n in GAIN_NAMES], dtype=float)

    @property
    def hi(self) -> np.ndarray:
        return np.array([self.bounds[n][1] for n in GAIN_NAMES], dtype=float)


@dataclass(frozen=True)
class TraceEntry:
    gains: ControllerGains
    J: float
    accepted: bool
    best_J: float


@dataclass
class TuneResult:
    best_gains: ControllerGains
    best_J: float
    evaluation_trace: list[TraceEntry]
    converged: dict[int, bool] = field(default_factory=dict)

    def write_trace(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(TRACE_HEADER)
            for i, e in enumerate(self.evaluation_trace, 1):
                g = e.gains
                w.writerow([i, g.d, repr(g.kp), repr(g.ki), repr(g.kd), repr(g.kdd), repr(e.J),
                            int(e.accepted), repr(e.best_J)])

    def write_best(self, path) -> None:
        write_gains(path, self.best_gains, comment=f"best J = {self.best_J!r} N")


def evaluate(gains: ControllerGains, scenario: ScenarioConfig) -> float:
    """Tracking cost of one full simulation; faults and NaN map to ``inf``."""
    if not scenario.closed_loop:
        raise TuneError("evaluate needs a closed-loop scenario")
    cfg = scenario.replace(**{"control.gains": gains})
    try:
        log, error, _ = simulate(cfg)
    except (ArithmeticError, ValueError):
        return math.inf
    if error or len(log) == 0:
        return math.inf
    ext = log.extruding()
    if not ext.any():
        return math.inf
    j = M.tracking_cost_J(log.select(ext))
    return j if math.isfinite(j) else math.inf


def _eval_task(args):
    scenarios, vec, d = args
    g = ControllerGains(*vec, d=d)
    total = 0.0
    for sc in scenarios:
        total += evaluate(g, sc)
        if total == math.inf:
            break
    return total / len(scenarios)


class _Evaluator:
    def __init__(self, spec: TuneSpec):
        self.spec = spec
        self.scenarios = ()
        if spec.objective is None:
            self.scenarios = tuple(c.replace(seed=spec.seed) for c in (spec.scenario, *spec.also))
        self.pool = None
        if spec.workers > 1 and spec.objective is None:
            self.pool = ProcessPoolExecutor(max_workers=spec.workers)

    def __call__(self, vecs: list[tuple], d: int) -> list[float]:
        if self.spec.objective is not None:
            out = []
            for v in vecs:
                try:
                    j = float(self.spec.objective(v, d))
                except (ArithmeticError, ValueError):
                    j = math.inf
                out.append(j if math.isfinite(j) else math.inf)
            return out
        if self.pool is not None:
            return list(self.pool.map(_eval_task, [(self.scenarios, v, d) for v in vecs]))
        return [_eval_task((self.scenarios, v, d)) for v in vecs]

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()


def tune(spec: TuneSpec) -> TuneResult:
    lo, hi = spec.lo, spec.hi
    width = hi - lo
    min_step = spec.tol * width
    init = spec.initial_gains or REFERENCE_GAINS
    x0 = np.clip(np.array(init.as_vector(), dtype=float), lo, hi)
    trace: list[TraceEntry] = []
    best = (math.inf, None)
    converged: dict[int, bool] = {}
    evaluator = _Evaluator(spec)

    def record(vec, d, j, accepted):
        nonlocal best
        g = ControllerGains(*(float(v) for v in vec), d=d)
        if j < best[0]:
            best = (j, g)
        trace.append(TraceEntry(g, j, accepted, best[0]))

    try:
        n_d = len(spec.d_values)
        for di, d in enumerate(spec.d_values):
            remaining = spec.budget - len(trace)
            if remaining <= 0:
                break
            # even share of what is left; unused evaluations roll over to later d
            quota = remaining // (n_d - di) + (1 if remaining % (n_d - di) else 0)
            stop_at = len(trace) + quota
            x = x0.copy()
            fx = evaluator([tuple(x)], d)[0]
            record(x, d, fx, True)
            step = INITIAL_STEP_FRAC * width
            converged[d] = False
            while len(trace) < stop_at:
                active = (step >= min_step) & (width > 0)
                if not active.any():
                    converged[d] = True
                    break
                cands = []
                for i in np.flatnonzero(active):
                    for sign in (1.0, -1.0):
                        c = x.copy()
                        c[i] = min(hi[i], max(lo[i], x[i] + sign * step[i]))
                        if c[i] != x[i]:
                            cands.append((i, c))
                if not cands:
                    step = np.where(active, step * 0.5, step)
                    continue
                cands = cands[:stop_at - len(trace)]
                vals = evaluator([tuple(c) for _, c in cands], d)
                k_best = min(range(len(vals)), key=lambda k: (vals[k], k))
                improved = vals[k_best] < fx
                for k, ((i, c), j) in enumerate(zip(cands, vals)):
                    record(c, d, j, improved and k == k_best)
                if improved:
                    i, c = cands[k_best]
                    x, fx = c, vals[k_best]
                    step[i] = min(2.0 * step[i], width[i])
                else:
                    step = np.where(active, step * 0.5, step)
    finally:
        evaluator.close()
    if best[1] is None:
        # everything diverged; report the first candidate
        best = (trace[0].J, trace[0].gains)
    return TuneResult(best[1], best[0], trace, converged)
