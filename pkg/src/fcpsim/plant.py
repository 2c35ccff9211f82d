"""Extrusion process model: wheel speed in, reaction force and bead width out.

The slow state is the melt flow leaving the nozzle (``flow``, in filament
mm/s), which lags the effective wheel feed with ``tau_nozzle``. The nozzle
force is the nozzle share of the static force map evaluated at that flow and
the current gap; the substrate force lags its share of the same map with the
short ``tau_substrate``. Both updates are exact for a command held constant
over the step, so a run is a pure function of its inputs and noise seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .planner import filament_area

FLAT = "flat"
LINEAR_TILT = "linear_tilt"
SLIP_NONE = "none"
SLIP_FORCE = "force_dependent"

# force-width anchors: 0.20 N -> 0.075 mm and 0.55 N -> 0.20 mm
_SLOPE = (0.20 - 0.075) / (0.55 - 0.20)
_INTERCEPT = 0.075 - _SLOPE * 0.20


class PlantFault(RuntimeError):
    """Non-finite plant state."""


class BedError(ValueError):
    pass


@dataclass(frozen=True)
class PlantParams:
    tau_nozzle: float = 9.0
    tau_substrate: float = 0.05
    width_slope_a: float = _SLOPE
    width_intercept_b: float = _INTERCEPT
    nominal_layer_height: float = 0.05
    nozzle_diameter: float = 0.15
    saturation_height_frac: float = 0.5
    saturation_width_frac: float = 1.5
    saturation_floor: float = 0.21
    sensor_noise_sd: float = 2e-3
    lever_length_l: float = 16.0  # power of two keeps torque / l == force bit-exact
    max_wheel_speed: float = 30.0
    filament_diameter: float = 1.75
    substrate_share: float = 0.5
    height_gamma: float = 0.02

    def __post_init__(self):
        if not self.tau_nozzle > self.tau_substrate > 0:
            raise ValueError("need tau_nozzle > tau_substrate > 0")
        checks = {
            "width_slope_a": self.width_slope_a > 0,
            "nominal_layer_height": self.nominal_layer_height > 0,
            "nozzle_diameter": self.nozzle_diameter > 0,
            "sensor_noise_sd": self.sensor_noise_sd >= 0,
            "lever_length_l": self.lever_length_l > 0,
            "max_wheel_speed": self.max_wheel_speed > 0,
            "filament_diameter": self.filament_diameter > 0,
            "saturation_height_frac": 0 < self.saturation_height_frac <= 1,
            "saturation_width_frac": self.saturation_width_frac > 0,
            "saturation_floor": 0 <= self.saturation_floor <= self.saturation_width_frac * self.nozzle_diameter,
            "substrate_share": 0 <= self.substrate_share < 1,
            "height_gamma": self.height_gamma >= 0,
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ValueError(f"invalid plant parameters: {', '.join(bad)}")

    @property
    def filament_area(self) -> float:
        return filament_area(self.filament_diameter)

    def without_noise(self) -> "PlantParams":
        return replace(self, sensor_noise_sd=0.0)


@dataclass(frozen=True)
class BedField:
    """Layer height over the bed: constant, or linear between two anchors on one axis."""

    mode: str = FLAT
    height: float = 0.05
    axis: str = "x"
    anchors: tuple[tuple[float, float], tuple[float, float]] = ((-20.0, 0.1), (20.0, 0.01))
    region: tuple[float, float, float, float] | None = None  # xmin, xmax, ymin, ymax

    def __post_init__(self):
        if self.mode == FLAT:
            if not self.height > 0:
                raise BedError("flat bed height must be positive")
        elif self.mode == LINEAR_TILT:
            (c0, h0), (c1, h1) = self.anchors
            if self.axis not in ("x", "y") or c0 == c1 or not (h0 > 0 and h1 > 0):
                raise BedError("tilted bed needs axis x|y, distinct anchors and positive heights")
        else:
            raise BedError(f"unknown bed mode {self.mode!r}")

    @classmethod
    def flat(cls, height: float = 0.05) -> "BedField":
        return cls(FLAT, height=height)

    @classmethod
    def tilt(cls, axis: str, start: tuple[float, float], end: tuple[float, float]) -> "BedField":
        return cls(LINEAR_TILT, axis=axis, anchors=(tuple(start), tuple(end)))


def bed_height(field: BedField, x: float, y: float, tol: float = 1e-9) -> float:
    """Layer height (mm) at ``(x, y)``; raises :class:`BedError` outside the print region."""
    if field.region is not None:
        xmin, xmax, ymin, ymax = field.region
        if not (xmin - tol <= x <= xmax + tol and ymin - tol <= y <= ymax + tol):
            raise BedError(f"({x}, {y}) is outside the print region")
    if field.mode == FLAT:
        return field.height
    (c0, h0), (c1, h1) = field.anchors
    c = x if field.axis == "x" else y
    if not (min(c0, c1) - tol <= c <= max(c0, c1) + tol):
        raise BedError(f"{field.axis}={c} is outside the tilted region [{min(c0, c1)}, {max(c0, c1)}]")
    u = (c - c0) / (c1 - c0)
    return h0 + u * (h1 - h0)


@dataclass(frozen=True)
class SlipModel:
    mode: str = SLIP_NONE
    grip_force_threshold: float = 0.1
    slip_softness: float = 0.3

    def __post_init__(self):
        if self.mode not in (SLIP_NONE, SLIP_FORCE):
            raise ValueError(f"unknown slip mode {self.mode!r}")
        if self.mode == SLIP_FORCE and not (self.grip_force_threshold > 0 and self.slip_softness > 0):
            raise ValueError("force-dependent slip needs positive threshold and softness")


def apply_slip(force: float, cmd: float, slip: SlipModel) -> float:
    """Traction ratio in (0, 1] between effective and commanded feed."""
    if slip.mode == SLIP_NONE:
        return 1.0
    excess = max(0.0, force - slip.grip_force_threshold)
    return 1.0 / (1.0 + excess / slip.slip_softness)


def height_factor(layer_height: float, params: PlantParams) -> float:
    """Extra force needed for a given width when the gap is below nominal."""
    h_nom = params.nominal_layer_height
    if layer_height >= h_nom:
        return 1.0
    return 1.0 + params.height_gamma * (h_nom / layer_height - 1.0)


def substrate_fraction(layer_height: float, params: PlantParams) -> float:
    h_nom = params.nominal_layer_height
    return params.substrate_share * max(0.0, (h_nom - layer_height) / h_nom)


def width_saturation_limit(layer_height: float, params: PlantParams) -> float:
    """Largest bead width the gap can take; ``inf`` above the saturation height."""
    h_sat = params.saturation_height_frac * params.nominal_layer_height
    if layer_height >= h_sat:
        return math.inf
    top = params.saturation_width_frac * params.nozzle_diameter
    return params.saturation_floor + (top - params.saturation_floor) * max(layer_height, 0.0) / h_sat


def raw_width(wheel_speed: float, layer_height: float, feed_rate: float, params: PlantParams) -> float:
    """Bead width from volume conservation, before saturation."""
    return params.filament_area * wheel_speed / (layer_height * feed_rate)


def steady_state_force(wheel_speed: float, layer_height: float, feed_rate: float, params: PlantParams) -> float:
    """Settled reaction force (N) for a constant feed.

    Uses the unsaturated width, so force keeps rising once the width has capped.
    """
    if wheel_speed < 0 or not layer_height > 0 or feed_rate < 0:
        raise ValueError("need wheel_speed >= 0, layer_height > 0, feed_rate >= 0")
    if wheel_speed == 0:
        return 0.0
    w = raw_width(wheel_speed, layer_height, feed_rate, params)
    f = (w - params.width_intercept_b) / params.width_slope_a * height_factor(layer_height, params)
    return max(0.0, f)


def wheel_speed_for_force(force: float, layer_height: float, feed_rate: float, params: PlantParams) -> float:
    """Inverse of :func:`steady_state_force` on its increasing branch."""
    if force <= 0:
        return 0.0
    w = force / height_factor(layer_height, params) * params.width_slope_a + params.width_intercept_b
    return w * layer_height * feed_rate / params.filament_area


@dataclass(frozen=True)
class PlantState:
    flow: float = 0.0  # melt flow, filament mm/s
    f_nozzle: float = 0.0
    f_substrate: float = 0.0
    f_measured: float = 0.0
    slip_eta: float = 1.0
    deposited_width: float = 0.0
    t: float = 0.0

    @property
    def load(self) -> float:
        """Noise-free drive load F_nozzle + F_substrate."""
        return self.f_nozzle + self.f_substrate


@dataclass(frozen=True)
class ForceSample:
    t: float
    x: float
    y: float
    layer_height: float
    f_reference: float | None
    f_measured: float
    wheel_speed_cmd: float
    wheel_speed_effective: float
    deposited_width: float
    torque: float


def steady_state(wheel_speed: float, layer_height: float, feed_rate: float, params: PlantParams,
                 slip: SlipModel | None = None) -> PlantState:
    """Settled state for a constant command (noise-free), e.g. to start a run primed."""
    eta = 1.0
    if slip is not None and slip.mode != SLIP_NONE:
        # fixed point of eta(F(eta * v)) by bisection on eta, the map is monotone
        lo, hi = 0.0, 1.0
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            f = steady_state_force(mid * wheel_speed, layer_height, feed_rate, params)
            if apply_slip(f, wheel_speed, slip) > mid:
                lo = mid
            else:
                hi = mid
        eta = 0.5 * (lo + hi)
    q = eta * wheel_speed
    f_total = steady_state_force(q, layer_height, feed_rate, params)
    sigma = substrate_fraction(layer_height, params)
    width = min(max(0.0, raw_width(q, layer_height, feed_rate, params)), width_saturation_limit(layer_height, params))
    return PlantState(flow=q, f_nozzle=(1 - sigma) * f_total, f_substrate=sigma * f_total,
                      f_measured=f_total, slip_eta=eta, deposited_width=width)


class Plant:
    """Single-owner extrusion process simulator.

    ``step`` advances by ``dt`` with the command held constant and returns the
    measurement taken at the end of the step.
    """

    _NOISE_BLOCK = 4096

    def __init__(self, params: PlantParams, slip: SlipModel | None = None, seed: int = 0,
                 state: PlantState | None = None):
        self.params = params
        self.slip = slip or SlipModel()
        self.seed = seed
        self.state = state or PlantState()
        self._rng = np.random.default_rng(seed)
        self._noise = np.empty(0)
        self._noise_i = 0

    def _next_noise(self) -> float:
        if self.params.sensor_noise_sd == 0:
            return 0.0
        if self._noise_i >= len(self._noise):
            self._noise = self._rng.standard_normal(self._NOISE_BLOCK) * self.params.sensor_noise_sd
            self._noise_i = 0
        v = self._noise[self._noise_i]
        self._noise_i += 1
        return float(v)

    def step(self, wheel_speed_cmd: float, layer_height: float, feed_rate: float, dt: float,
             extruding: bool = True, x: float = 0.0, y: float = 0.0,
             f_reference: float | None = None) -> ForceSample:
        p = self.params
        s = self.state
        if not dt > 0:
            raise ValueError("dt must be positive")
        eta = apply_slip(s.load, wheel_speed_cmd, self.slip)
        v_eff = eta * wheel_speed_cmd

        # affine force map F = k * flow + c at this gap
        g = height_factor(layer_height, p)
        k = p.filament_area * g / (p.width_slope_a * layer_height * feed_rate)
        c = -g * p.width_intercept_b / p.width_slope_a
        sigma = substrate_fraction(layer_height, p) if extruding else 0.0

        tn, ts = p.tau_nozzle, p.tau_substrate
        en, es = math.exp(-dt / tn), math.exp(-dt / ts)
        q0 = s.flow
        q1 = v_eff + (q0 - v_eff) * en
        # exact response of the substrate lag to an exponentially settling flow
        fs = s.f_substrate * es + sigma * ((k * v_eff + c) * (1.0 - es)
                                           + k * (q0 - v_eff) * tn / (tn - ts) * (en - es))
        fs = max(0.0, fs)
        fn = (1.0 - sigma) * max(0.0, k * q1 + c)
        if extruding:
            width = min(max(0.0, p.filament_area * q1 / (layer_height * feed_rate)),
                        width_saturation_limit(layer_height, p))
        else:
            width = 0.0
        f_meas = fn + fs + self._next_noise()
        torque = f_meas * p.lever_length_l
        if not (math.isfinite(q1) and math.isfinite(fs) and math.isfinite(torque)):
            raise PlantFault(f"non-finite plant state at t={s.t + dt}")
        self.state = PlantState(flow=q1, f_nozzle=fn, f_substrate=fs, f_measured=f_meas,
                                slip_eta=eta, deposited_width=width, t=s.t + dt)
        return ForceSample(
            t=s.t + dt, x=x, y=y, layer_height=layer_height, f_reference=f_reference,
            f_measured=f_meas, wheel_speed_cmd=wheel_speed_cmd, wheel_speed_effective=v_eff,
            deposited_width=width, torque=torque,
        )


def step(state: PlantState, wheel_speed_cmd: float, local: tuple[float, float], dt: float,
         params: PlantParams, slip: SlipModel | None = None, rng_seed: int = 0,
         extruding: bool = True) -> tuple[PlantState, ForceSample]:
    """Functional form of :meth:`Plant.step` for a single step."""
    plant = Plant(params, slip, seed=rng_seed, state=state)
    sample = plant.step(wheel_speed_cmd, local[0], local[1], dt, extruding=extruding)
    return plant.state, sample
