"""Force controller: PID with a standard and a down-sampled derivative term.

Output is the filament feed speed in mm/s, force in N::

    e    = F_r - F
    e_i += (t - t_prev) * e
    e_d  = (e - e_prev) / (t - t_prev)
    e_dd = (e - e[k-d]) / (t - t[k-d])
    v    = Kp*e + Ki*e_i + Kd*e_d + Kdd*e_dd

Before ``d`` samples have been seen, ``e[k-d]`` falls back to the oldest stored
sample. The integrator is frozen on steps where the output clamp is active and
integrating would push further into it.
"""

from __future__ import annotations

import copy
import math
from collections import deque
from dataclasses import dataclass


class ControllerError(ValueError):
    pass


@dataclass(frozen=True)
class ControllerGains:
    kp: float
    ki: float
    kd: float
    kdd: float
    d: int = 10

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise ControllerError(f"down-sampling lag d must be an integer >= 1, got {self.d!r}")
        for name in ("kp", "ki", "kd", "kdd"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise ControllerError(f"gain {name} must be finite and >= 0, got {v!r}")

    def as_vector(self) -> tuple[float, float, float, float]:
        return (self.kp, self.ki, self.kd, self.kdd)


# gains tuned for 0.20 N at 100 mm/s, 0.15 mm nozzle
REFERENCE_GAINS = ControllerGains(kp=44.72, ki=7.22, kd=2.25, kdd=1.12, d=10)


class ControllerState:
    """Error history (capacity ``d + 1``), integral accumulator and last output."""

    def __init__(self, d: int = 10):
        self.history: deque[tuple[float, float]] = deque(maxlen=d + 1)
        self.e_i = 0.0
        self.last_output = 0.0

    @property
    def capacity(self) -> int:
        return self.history.maxlen

    def __repr__(self):
        return f"ControllerState(n={len(self.history)}, e_i={self.e_i!r}, last_output={self.last_output!r})"


def reset(state: ControllerState) -> ControllerState:
    state.history.clear()
    state.e_i = 0.0
    state.last_output = 0.0
    return state


class ForceController:
    def __init__(self, gains: ControllerGains, v_min: float = 0.0, v_max: float = 10.0):
        if not v_min <= v_max:
            raise ControllerError("v_min must not exceed v_max")
        self.gains = gains
        self.v_min = v_min
        self.v_max = v_max
        self.state = ControllerState(gains.d)

    def reset(self) -> None:
        reset(self.state)

    def step(self, f_ref: float, f_meas: float, t: float) -> float:
        if not (math.isfinite(f_ref) and math.isfinite(f_meas) and math.isfinite(t)):
            raise ControllerError("non-finite controller input")
        g = self.gains
        st = self.state
        hist = st.history
        e = f_ref - f_meas
        if hist:
            t_prev, e_prev = hist[-1]
            if not t > t_prev:
                raise ControllerError(f"timestamp {t!r} does not follow {t_prev!r}")
            dt = t - t_prev
            e_d = (e - e_prev) / dt
            e_i = st.e_i + dt * e
        else:
            e_d = 0.0
            e_i = st.e_i
        hist.append((t, e))
        if len(hist) > 1:
            # capacity d + 1, so once full hist[0] is exactly d samples back
            t_old, e_old = hist[0]
            e_dd = (e - e_old) / (t - t_old)
        else:
            e_dd = 0.0

        pdd = g.kp * e + g.kd * e_d + g.kdd * e_dd
        v = pdd + g.ki * e_i
        if (v > self.v_max and e > 0) or (v < self.v_min and e < 0):
            # integrating would deepen saturation
            v = pdd + g.ki * st.e_i
        else:
            st.e_i = e_i
        v = min(self.v_max, max(self.v_min, v))
        st.last_output = v
        return v


def control_step(state: ControllerState, f_ref: float, f_meas: float, t: float,
                 gains: ControllerGains, limits: tuple[float, float] = (0.0, 10.0)) -> tuple[ControllerState, float]:
    """Pure form of :meth:`ForceController.step`; ``state`` is left untouched."""
    ctl = ForceController(gains, *limits)
    if state.capacity != gains.d + 1:
        raise ControllerError("state history capacity does not match d + 1")
    ctl.state = copy.deepcopy(state)
    v = ctl.step(f_ref, f_meas, t)
    return ctl.state, v


def open_loop_step(annotation: float | None) -> float:
    """Feedforward extrusion: the precomputed wheel speed, unchanged."""
    if annotation is None or not math.isfinite(annotation):
        raise ControllerError("open-loop step needs a feedforward annotation")
    return float(annotation)
