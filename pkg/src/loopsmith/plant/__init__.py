"""Longitudinal vehicle simulation lab: models, loop components, episodes."""

from .models import (
    ModelState,
    MultiBodyModel,
    PlantParams,
    PointMassModel,
    SingleTrackModel,
    VehicleModel,
    build_model,
    replay_open_loop,
)
from .components import (
    PassthroughFilter,
    PidController,
    SaturatingActuator,
    Sensor,
    VelocityKalmanFilter,
)
from .mpc import MpcController, MpcSettings, MpcSolution, solve_input_sequence
from .episode import (
    EpisodeReport,
    EpisodeServices,
    EpisodeSettings,
    SyntheticStepTimer,
    WallClockStepTimer,
    run_episode,
)

__all__ = [
    "ModelState",
    "MultiBodyModel",
    "PlantParams",
    "PointMassModel",
    "SingleTrackModel",
    "VehicleModel",
    "build_model",
    "replay_open_loop",
    "PassthroughFilter",
    "PidController",
    "SaturatingActuator",
    "Sensor",
    "VelocityKalmanFilter",
    "MpcController",
    "MpcSettings",
    "MpcSolution",
    "solve_input_sequence",
    "EpisodeReport",
    "EpisodeServices",
    "EpisodeSettings",
    "SyntheticStepTimer",
    "WallClockStepTimer",
    "run_episode",
]
