"""Sensors, filters, a PID controller, and actuators for the velocity loop."""

from __future__ import annotations

from dataclasses import replace

import numpy as np

from .models import ModelState, VehicleModel

_VARIANCE_FLOOR = 1e-12


class Sensor:
    """Velocity sensor with additive white Gaussian noise."""

    def __init__(self, noise_std: float):
        if noise_std < 0.0:
            raise ValueError("noise_std must be >= 0")
        self.noise_std = noise_std

    def sense(self, true_velocity: float, rng: np.random.Generator) -> float:
        return true_velocity + rng.normal(0.0, self.noise_std) if self.noise_std else true_velocity


class PassthroughFilter:
    """Identity filter: the estimate is the raw measurement."""

    def update(self, measurement: float, previous_command: float) -> float:
        return measurement


class VelocityKalmanFilter:
    """Scalar Kalman filter on velocity with a model-based predict step.

    The prediction propagates the paired model from the current estimate with
    the previous loop command; the model's internal drive-force state is
    carried along deterministically. The velocity variance is linearized
    about the estimate via the model Jacobian. A positive floor on the
    variance replaces the jitter-retry a matrix filter would need, since a
    scalar covariance can only lose definiteness by rounding to zero.
    """

    def __init__(
        self,
        model: VehicleModel,
        dt: float,
        substeps: int,
        measurement_noise_std: float,
        process_noise_var: float,
        initial_velocity: float,
        initial_variance: float = 1.0,
    ):
        if process_noise_var < 0.0:
            raise ValueError("process_noise_var must be >= 0")
        if initial_variance <= 0.0:
            raise ValueError("initial_variance must be > 0")
        self._model = model
        self._dt = dt
        self._substeps = substeps
        self._measurement_var = measurement_noise_std**2
        self._process_var = process_noise_var
        self._state = ModelState(velocity=initial_velocity)
        self._variance = initial_variance

    @property
    def variance(self) -> float:
        return self._variance

    @property
    def state(self) -> ModelState:
        return self._state

    def update(self, measurement: float, previous_command: float) -> float:
        a, _ = self._model.step_jacobians(self._state, previous_command, self._dt, self._substeps)
        predicted = self._model.step(self._state, previous_command, self._dt, self._substeps)
        a_vv = a[0, 0]
        variance_pred = a_vv * self._variance * a_vv + self._process_var

        innovation = measurement - predicted.velocity
        innovation_var = variance_pred + self._measurement_var
        gain = 1.0 if innovation_var <= 0.0 else variance_pred / innovation_var
        estimate = predicted.velocity + gain * innovation
        variance = (1.0 - gain) * variance_pred

        self._variance = max(variance, _VARIANCE_FLOOR)
        self._state = replace(predicted, velocity=estimate)
        return estimate


class PidController:
    """PID on the velocity error with clamped-integral anti-windup.

    The integral term is clamped so its contribution alone never exceeds the
    output limits, which stops windup while the output saturates.
    """

    def __init__(
        self,
        kp: float,
        ki: float,
        kd: float,
        dt: float,
        output_min: float,
        output_max: float,
    ):
        if dt <= 0.0:
            raise ValueError("dt must be > 0")
        if output_min >= output_max:
            raise ValueError("output_min must be < output_max")
        self.kp = kp
        self.ki = ki
        self.kd = kd
        self.dt = dt
        self.output_min = output_min
        self.output_max = output_max
        self._integral = 0.0
        self._previous_error: float | None = None

    @property
    def integral_term(self) -> float:
        return self.ki * self._integral

    def compute(self, estimate: float, reference: float) -> float:
        error = reference - estimate
        if self.ki:
            self._integral += error * self.dt
            bound_low = self.output_min / self.ki
            bound_high = self.output_max / self.ki
            self._integral = float(np.clip(self._integral, bound_low, bound_high))
        derivative = 0.0
        if self._previous_error is not None:
            derivative = (error - self._previous_error) / self.dt
        self._previous_error = error
        output = self.kp * error + self.ki * self._integral + self.kd * derivative
        return float(np.clip(output, self.output_min, self.output_max))


class SaturatingActuator:
    """Clamps the command to the operating range and quantizes it.

    The relative inaccuracy is resolution over operating range, a datasheet
    constant that runtime measurements never change.
    """

    def __init__(self, range_min: float, range_max: float, resolution: float):
        if range_min >= range_max:
            raise ValueError("range_min must be < range_max")
        if resolution < 0.0:
            raise ValueError("resolution must be >= 0")
        self.range_min = range_min
        self.range_max = range_max
        self.resolution = resolution

    @property
    def epsilon(self) -> float:
        return self.resolution / (self.range_max - self.range_min)

    def apply(self, command: float) -> float:
        clamped = float(np.clip(command, self.range_min, self.range_max))
        if self.resolution <= 0.0:
            return clamped
        quantized = round(clamped / self.resolution) * self.resolution
        # Quantization can round past a range edge; keep the output in range.
        return float(np.clip(quantized, self.range_min, self.range_max))
