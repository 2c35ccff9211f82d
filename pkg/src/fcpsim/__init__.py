"""Force-controlled extrusion simulator: toolpaths, process model, PID control and experiments."""

from .controller import REFERENCE_GAINS, ControllerGains, ForceController
from .plant import BedField, Plant, PlantParams, SlipModel
from .config import ScenarioConfig, load_config
from .harness import RunRecord, SampleLog, run_scenario

__version__ = "0.1.0"

__all__ = [
    "REFERENCE_GAINS", "ControllerGains", "ForceController", "BedField", "Plant", "PlantParams",
    "SlipModel", "ScenarioConfig", "load_config", "RunRecord", "SampleLog", "run_scenario",
]
