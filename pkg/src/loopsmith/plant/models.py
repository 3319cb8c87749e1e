"""Longitudinal vehicle models at three fidelity levels.

All models map a commanded acceleration (m/s^2) to forward velocity with
explicit Euler substeps. Commands clamp to +-a_max and velocity to
[0, v_max] in every model; the richer models add physics on top:

* point mass: velocity integrates the command directly.
* single track: the command becomes a drive force on the vehicle mass,
  opposed by aerodynamic drag and rolling resistance.
* multi body: as single track, plus a first-order lag on drive-force
  buildup and a traction cap on the transmissible force.

The multi-body model doubles as the simulated plant, so replaying it
open-loop over a recorded command sequence reproduces the plant trajectory
exactly when integrated at the same substep resolution.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

_JACOBIAN_EPS = 1e-6


@dataclass(frozen=True, slots=True)
class PlantParams:
    """Physical constants shared by every fidelity level."""

    mass_kg: float = 1500.0
    drag_coeff: float = 0.4  # lumped 0.5 * rho * c_d * A, N s^2 / m^2
    rolling_coeff: float = 0.012
    actuator_lag_s: float = 0.2
    traction_cap_n: float = 4000.0
    v_max: float = 15.0
    a_max: float = 3.0
    gravity: float = 9.81


@dataclass(frozen=True, slots=True)
class ModelState:
    """Velocity plus the drive-force state used by the lagged model."""

    velocity: float
    drive_force_n: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.velocity, self.drive_force_n])

    @staticmethod
    def from_array(values: np.ndarray) -> "ModelState":
        return ModelState(velocity=float(values[0]), drive_force_n=float(values[1]))


class VehicleModel:
    """Base class: command clamping, substep integration, linearization."""

    name = "vehicle"

    def __init__(self, params: PlantParams):
        self.params = params

    def _substep(self, state: ModelState, command: float, h: float) -> ModelState:
        raise NotImplementedError

    def step(self, state: ModelState, command: float, dt: float, substeps: int = 1) -> ModelState:
        """Advance one control interval with ``substeps`` Euler substeps."""
        p = self.params
        u = float(np.clip(command, -p.a_max, p.a_max))
        h = dt / substeps
        for _ in range(substeps):
            state = self._substep(state, u, h)
        return state

    def _resistive_force(self, velocity: float) -> float:
        p = self.params
        drag = p.drag_coeff * velocity * velocity
        rolling = p.rolling_coeff * p.mass_kg * p.gravity if velocity > 0.0 else 0.0
        return drag + rolling

    def _clamp_velocity(self, velocity: float) -> float:
        p = self.params
        return min(max(velocity, 0.0), p.v_max)

    def step_jacobians(
        self, state: ModelState, command: float, dt: float, substeps: int = 1
    ) -> tuple[np.ndarray, np.ndarray]:
        """Forward-difference Jacobians of ``step`` w.r.t. state and command.

        Returns ``(A, B)`` with A of shape (2, 2) over (velocity, drive force)
        and B of shape (2,). Used by the state estimator and the predictive
        controller; exact for the linear model, local elsewhere.
        """
        base = self.step(state, command, dt, substeps).as_array()
        a = np.zeros((2, 2))
        z0 = state.as_array()
        for i in range(2):
            perturbed = z0.copy()
            perturbed[i] += _JACOBIAN_EPS
            shifted = self.step(ModelState.from_array(perturbed), command, dt, substeps)
            a[:, i] = (shifted.as_array() - base) / _JACOBIAN_EPS
        # Perturb the command toward the inside of the admissible box so the
        # clamp cannot flatten the derivative at a saturated command.
        du = _JACOBIAN_EPS if command + _JACOBIAN_EPS <= self.params.a_max else -_JACOBIAN_EPS
        shifted = self.step(state, command + du, dt, substeps)
        b = (shifted.as_array() - base) / du
        return a, b


class PointMassModel(VehicleModel):
    """Velocity integrates the commanded acceleration directly."""

    name = "point_mass"

    def _substep(self, state: ModelState, command: float, h: float) -> ModelState:
        velocity = self._clamp_velocity(state.velocity + command * h)
        return replace(state, velocity=velocity)


class SingleTrackModel(VehicleModel):
    """Drive force on the vehicle mass opposed by drag and rolling resistance."""

    name = "single_track"

    def _substep(self, state: ModelState, command: float, h: float) -> ModelState:
        p = self.params
        drive = p.mass_kg * command
        accel = (drive - self._resistive_force(state.velocity)) / p.mass_kg
        velocity = self._clamp_velocity(state.velocity + accel * h)
        return replace(state, velocity=velocity)


class MultiBodyModel(VehicleModel):
    """Single-track physics plus drivetrain force lag and a traction cap."""

    name = "multi_body"

    def _substep(self, state: ModelState, command: float, h: float) -> ModelState:
        p = self.params
        commanded_force = p.mass_kg * command
        force = state.drive_force_n + h * (commanded_force - state.drive_force_n) / p.actuator_lag_s
        force = float(np.clip(force, -p.traction_cap_n, p.traction_cap_n))
        accel = (force - self._resistive_force(state.velocity)) / p.mass_kg
        velocity = self._clamp_velocity(state.velocity + accel * h)
        return ModelState(velocity=velocity, drive_force_n=force)


_MODEL_TYPES: dict[str, type[VehicleModel]] = {
    PointMassModel.name: PointMassModel,
    SingleTrackModel.name: SingleTrackModel,
    MultiBodyModel.name: MultiBodyModel,
}

MODEL_TYPE_NAMES = tuple(sorted(_MODEL_TYPES))


def build_model(type_name: str, params: PlantParams) -> VehicleModel:
    try:
        return _MODEL_TYPES[type_name](params)
    except KeyError:
        raise ValueError(
            f"unknown model type {type_name!r}; expected one of {MODEL_TYPE_NAMES}"
        ) from None


def replay_open_loop(
    model: VehicleModel,
    initial: ModelState,
    commands: np.ndarray,
    dt: float,
    substeps: int = 1,
) -> np.ndarray:
    """Velocity trajectory from replaying a recorded command sequence.

    Samples align with the command sequence: entry k is the velocity *before*
    applying command k, matching how closed-loop runs record the plant.
    """
    velocities = np.empty(len(commands))
    state = initial
    for k, command in enumerate(commands):
        velocities[k] = state.velocity
        state = model.step(state, float(command), dt, substeps)
    return velocities
