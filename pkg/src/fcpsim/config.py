"""Scenario configuration: one YAML file describes one run, study or tuning job.

Grammar (all sections optional except ``name``; omitted keys take defaults)::

    name: validation
    seed: 0                      # sensor-noise seed
    sample_period: 0.001         # s
    output_dir: runs/validation
    initial_state: rest          # rest | steady
    target_width: null           # mm, width metrics target (defaults from control)
    trajectory:
      kind: snake                # snake | star
      line_length: 40.0          # snake only
      n_lines: 40
      spacing: 1.0
      origin: [-20.0, -20.0]
      polygon: null              # star only; list of [x, y], default shipped star
      line_spacing: 0.15
      layers: 1                  # identical repeated layers
      feed_rate: 100.0
    control:
      mode: closed_loop          # closed_loop | open_loop
      reference: 0.2             # N, constant reference ...
      schedule: null             # ... or [[first_pass, last_pass, N], ...]
      stepwise: null             # ... or {start: 0.2, increment: 0.1, every: 7}
      gains: {kp: 44.72, ki: 7.22, kd: 2.25, kdd: 1.12, d: 10}
      gains_file: null           # key=value file written by `tune`, overrides gains
      line_width: 0.075          # open loop: slicer bead width, mm
      slicer_layer_height: 0.05  # open loop: height the slicer plans for, mm
      wheel_speed: null          # open loop: explicit feed speed, overrides the slicer
    plant: {tau_nozzle: 9.0, ...}        # any PlantParams field
    bed: {mode: flat, height: 0.05}      # or {mode: linear_tilt, axis: x, anchors: [[-20, 0.1], [20, 0.01]]}
    slip: {mode: none}                   # or {mode: force_dependent, grip_force_threshold: 0.1, slip_softness: 0.3}
    metadata: {nozzle_temperature_C: 300, bed_temperature_C: 170}
    tune: {budget: 200, d_values: [1, 5, 10, 20], bounds: null, tol: 0.001, seed: 0, initial: reference,
           also: []}                     # extra scenario files (or shipped names); J is averaged over all
    study: {...}                         # study-specific keys, see fcpsim.studies
"""

from __future__ import annotations

import copy
import dataclasses
import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .controller import REFERENCE_GAINS, ControllerGains
from .plant import BedField, PlantParams, SlipModel

CLOSED_LOOP = "closed_loop"
OPEN_LOOP = "open_loop"
OUTPUT_ENV = "FCPSIM_OUTPUT_ROOT"


class ConfigError(ValueError):
    pass


@dataclass
class TrajectorySpec:
    kind: str = "snake"
    line_length: float = 40.0
    n_lines: int = 40
    spacing: float = 1.0
    origin: tuple[float, float] = (-20.0, -20.0)
    polygon: list[tuple[float, float]] | None = None
    line_spacing: float = 0.15
    layers: int = 1
    feed_rate: float = 100.0

    def validate(self):
        if self.kind not in ("snake", "star"):
            raise ConfigError(f"trajectory.kind must be snake or star, got {self.kind!r}")
        if not self.feed_rate > 0:
            raise ConfigError("trajectory.feed_rate must be positive")
        if int(self.layers) != self.layers or self.layers < 1:
            raise ConfigError("trajectory.layers must be an integer >= 1")


@dataclass
class ControlSpec:
    mode: str = CLOSED_LOOP
    reference: float = 0.2
    schedule: list[tuple[int, int, float]] | None = None
    stepwise: dict | None = None
    gains: ControllerGains = REFERENCE_GAINS
    gains_file: str | None = None
    line_width: float = 0.075
    slicer_layer_height: float = 0.05
    wheel_speed: float | None = None

    def validate(self):
        if self.mode not in (CLOSED_LOOP, OPEN_LOOP):
            raise ConfigError(f"control.mode must be closed_loop or open_loop, got {self.mode!r}")
        given = [k for k in ("schedule", "stepwise") if getattr(self, k) is not None]
        if len(given) > 1:
            raise ConfigError("give at most one of control.schedule and control.stepwise")
        if self.stepwise is not None and set(self.stepwise) != {"start", "increment", "every"}:
            raise ConfigError("control.stepwise needs exactly start, increment, every")
        if not self.reference >= 0:
            raise ConfigError("control.reference must be >= 0")


@dataclass
class TuneConfig:
    budget: int = 200
    d_values: tuple[int, ...] = (1, 5, 10, 20)
    bounds: dict | None = None
    tol: float = 1e-3
    seed: int = 0
    initial: str = "reference"
    workers: int = 1
    also: list[str] = field(default_factory=list)


@dataclass
class ScenarioConfig:
    name: str = "scenario"
    seed: int = 0
    sample_period: float = 1e-3
    output_dir: str | None = None
    initial_state: str = "rest"
    target_width: float | None = None
    trajectory: TrajectorySpec = field(default_factory=TrajectorySpec)
    control: ControlSpec = field(default_factory=ControlSpec)
    plant: PlantParams = field(default_factory=PlantParams)
    bed: BedField = field(default_factory=BedField)
    slip: SlipModel = field(default_factory=SlipModel)
    metadata: dict = field(default_factory=lambda: {"nozzle_temperature_C": 300.0, "bed_temperature_C": 170.0})
    tune: TuneConfig = field(default_factory=TuneConfig)
    study: dict = field(default_factory=dict)
    source: str | None = field(default=None, compare=False)

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.sample_period > 0:
            raise ConfigError("sample_period must be positive")
        if self.initial_state not in ("rest", "steady"):
            raise ConfigError("initial_state must be rest or steady")
        self.trajectory.validate()
        self.control.validate()

    @property
    def closed_loop(self) -> bool:
        return self.control.mode == CLOSED_LOOP

    def replace(self, **changes) -> "ScenarioConfig":
        """Copy with top-level or dotted (``"control.mode"``) fields replaced."""
        cfg = copy.deepcopy(self)
        for key, value in changes.items():
            parts = key.split(".")
            obj = cfg
            for p in parts[:-1]:
                obj = getattr(obj, p)
            if dataclasses.is_dataclass(obj) and obj.__dataclass_params__.frozen:
                parent = cfg
                for p in parts[:-2]:
                    parent = getattr(parent, p)
                setattr(parent, parts[-2], dataclasses.replace(obj, **{parts[-1]: value}))
            else:
                setattr(obj, parts[-1], value)
        cfg.validate()
        return cfg

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "seed": self.seed,
            "sample_period": self.sample_period,
            "output_dir": self.output_dir,
            "initial_state": self.initial_state,
            "target_width": self.target_width,
            "trajectory": _plain(dataclasses.asdict(self.trajectory)),
            "control": _plain({**dataclasses.asdict(self.control), "gains": gains_to_dict(self.control.gains)}),
            "plant": dataclasses.asdict(self.plant),
            "bed": _plain(dataclasses.asdict(self.bed)),
            "slip": dataclasses.asdict(self.slip),
            "metadata": dict(self.metadata),
            "tune": _plain(dataclasses.asdict(self.tune)),
            "study": _plain(self.study),
        }

    @classmethod
    def from_dict(cls, d: dict, source: str | None = None) -> "ScenarioConfig":
        if not isinstance(d, dict):
            raise ConfigError("config must be a mapping")
        d = dict(d)
        known = {f.name for f in dataclasses.fields(cls)} - {"source"}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            ctl = dict(d.pop("control", None) or {})
            if "gains" in ctl:
                ctl["gains"] = gains_from_dict(ctl["gains"])
            gains_file = ctl.get("gains_file")
            if gains_file:
                path = Path(gains_file)
                if not path.is_absolute() and source:
                    path = Path(source).parent / path
                ctl["gains"] = read_gains(path)
                # resolved; snapshots carry the gains themselves
                ctl["gains_file"] = None
            traj = dict(d.pop("trajectory", None) or {})
            if "origin" in traj:
                traj["origin"] = tuple(traj["origin"])
            if traj.get("polygon") is not None:
                traj["polygon"] = [tuple(p) for p in traj["polygon"]]
            if ctl.get("schedule") is not None:
                ctl["schedule"] = [tuple(r) for r in ctl["schedule"]]
            bed = dict(d.pop("bed", None) or {})
            if "anchors" in bed:
                bed["anchors"] = tuple(tuple(a) for a in bed["anchors"])
            if bed.get("region") is not None:
                bed["region"] = tuple(bed["region"])
            tune = dict(d.pop("tune", None) or {})
            if "d_values" in tune:
                tune["d_values"] = tuple(tune["d_values"])
            if tune.get("also"):
                tune["also"] = [_resolve_scenario_ref(str(a), source) for a in tune["also"]]
            return cls(
                trajectory=TrajectorySpec(**traj),
                control=ControlSpec(**ctl),
                plant=PlantParams(**(d.pop("plant", None) or {})),
                bed=BedField(**bed),
                slip=SlipModel(**(d.pop("slip", None) or {})),
                tune=TuneConfig(**tune),
                source=source,
                **d,
            )
        except ConfigError:
            raise
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"invalid config{f' {source}' if source else ''}: {exc}") from exc


def _resolve_scenario_ref(ref: str, source: str | None) -> str:
    """Config-relative paths become absolute; bare names are left for :func:`shipped_config`."""
    path = Path(ref)
    if path.suffix in (".yaml", ".yml") and not path.is_absolute() and source:
        return str((Path(source).parent / path).resolve())
    return ref


def load_scenario_ref(ref: str) -> "ScenarioConfig":
    path = Path(ref)
    if path.suffix in (".yaml", ".yml"):
        return load_config(path)
    return shipped_config(ref)


def gains_to_dict(g: ControllerGains) -> dict:
    return {"kp": g.kp, "ki": g.ki, "kd": g.kd, "kdd": g.kdd, "d": g.d}


def gains_from_dict(d) -> ControllerGains:
    if isinstance(d, ControllerGains):
        return d
    if not isinstance(d, dict):
        raise ConfigError("gains must be a mapping with kp, ki, kd, kdd, d")
    return ControllerGains(kp=float(d["kp"]), ki=float(d["ki"]), kd=float(d["kd"]),
                           kdd=float(d["kdd"]), d=int(d.get("d", 10)))


def read_gains(path) -> ControllerGains:
    """Read a ``key=value`` best-gains file as written by :func:`write_gains`."""
    vals = {}
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read gains file {path}: {exc}") from exc
    for line in text.splitlines():
        line = line.split("#", 1)[0].strip()
        if line:
            k, _, v = line.partition("=")
            vals[k.strip()] = v.strip()
    try:
        return gains_from_dict({k: vals[k] for k in ("kp", "ki", "kd", "kdd", "d")})
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"malformed gains file {path}: {exc}") from exc


def write_gains(path, g: ControllerGains, comment: str | None = None) -> None:
    lines = [f"# {comment}"] if comment else []
    lines += [f"kp={g.kp!r}", f"ki={g.ki!r}", f"kd={g.kd!r}", f"kdd={g.kdd!r}", f"d={g.d}"]
    Path(path).write_text("\n".join(lines) + "\n")


def _plain(obj):
    """Tuples to lists, recursively, for YAML output."""
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    return obj


def load_config(path) -> ScenarioConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
    return ScenarioConfig.from_dict(data or {}, source=str(path))


def dump_config(cfg: ScenarioConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)


def save_config(cfg: ScenarioConfig, path) -> None:
    Path(path).write_text(dump_config(cfg))


def default_output_root() -> Path:
    return Path(os.environ.get(OUTPUT_ENV, "runs"))


def shipped_config(name: str) -> ScenarioConfig:
    """One of the scenario files bundled under ``fcpsim/data/scenarios``."""
    path = Path(__file__).parent / "data" / "scenarios" / f"{name}.yaml"
    if not path.exists():
        raise ConfigError(f"no shipped scenario named {name!r}")
    return load_config(path)
