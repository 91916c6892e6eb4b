"""Delay-compensating sampled-data control of a neuromuscular stimulation plant.

The controller predicts the tracking error one delay ahead with an explicit
Euler scheme whose step count is chosen from envelope functions, then feeds
the prediction back between samples in closed form.
"""

from .config import ConfigError, ScenarioConfig, load_config
from .controller import ControllerState, control_law, intersample_xi, on_sample
from .dynamics import (ConstraintViolation, ErrorState, PlantModel, PlantState, ReferenceSpec,
                       ReferenceTrajectory, error_rhs, plant_rhs, reference_build,
                       to_error_coords, from_error_coords)
from .envelopes import (EnvelopeError, EnvelopeSet, StepCountError, build_envelopes,
                        step_count, validate_envelopes)
from .predictor import InputHistory, euler_predict, predict
from .simulator import (SimConfig, Trajectory, check_lyapunov_decay, fit_decay_rate,
                        make_schedule, run_closed_loop)

__all__ = [
    "ConfigError", "ScenarioConfig", "load_config", "ControllerState", "control_law",
    "intersample_xi", "on_sample", "ConstraintViolation", "ErrorState", "PlantModel",
    "PlantState", "ReferenceSpec", "ReferenceTrajectory", "error_rhs", "plant_rhs",
    "reference_build", "to_error_coords", "from_error_coords", "EnvelopeError", "EnvelopeSet",
    "StepCountError", "build_envelopes", "step_count", "validate_envelopes", "InputHistory",
    "euler_predict", "predict", "SimConfig", "Trajectory", "check_lyapunov_decay",
    "fit_decay_rate", "make_schedule", "run_closed_loop",
]
