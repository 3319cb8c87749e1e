"""Receding-horizon velocity controller via projected gradient descent.

Each cycle solves

    min_u  sum_k  Q * (v_k+1 - v_ref)^2  +  R * (u_k - u_ref)^2

over the model's N predicted states, subject to a hard box on the inputs
(projection) and a quadratic penalty on velocity-bound violations. Nonlinear
models are handled by iterating: roll the model out along the current input
sequence, linearize each step around that trajectory, descend on the
condensed quadratic, repeat. For a linear model the first linearization is
exact and the inner descent alone solves the problem.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .models import ModelState, VehicleModel


@dataclass(frozen=True, slots=True)
class MpcSettings:
    horizon: int = 10
    state_weight: float = 1.0
    input_weight: float = 0.1
    input_reference: float = 0.0
    max_iterations: int = 200
    tolerance: float = 1e-6
    relinearizations: int = 5
    state_penalty_weight: float = 100.0

    def __post_init__(self) -> None:
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.state_weight < 0.0 or self.input_weight < 0.0:
            raise ValueError("weights must be >= 0")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.tolerance <= 0.0:
            raise ValueError("tolerance must be > 0")


@dataclass(frozen=True)
class MpcSolution:
    """Solved input sequence plus solver diagnostics."""

    inputs: np.ndarray
    predicted_velocities: np.ndarray
    cost: float
    iterations: int
    hit_iteration_cap: bool


def _rollout(
    model: VehicleModel,
    initial: ModelState,
    inputs: np.ndarray,
    dt: float,
    substeps: int,
) -> np.ndarray:
    """Predicted velocities v_1..v_N for the input sequence."""
    state = initial
    velocities = np.empty(len(inputs))
    for k, u in enumerate(inputs):
        state = model.step(state, float(u), dt, substeps)
        velocities[k] = state.velocity
    return velocities


def _linearize(
    model: VehicleModel,
    initial: ModelState,
    inputs: np.ndarray,
    dt: float,
    substeps: int,
) -> tuple[np.ndarray, np.ndarray]:
    """Sensitivities of predicted velocities to the inputs.

    Returns (nominal velocities, M) with M[i, j] = d v_{i+1} / d u_j, built
    from per-step Jacobians chained along the nominal trajectory. The full
    two-dimensional state (velocity, drive force) propagates through the
    chain so force-lag dynamics are captured.
    """
    n = len(inputs)
    state = initial
    nominal = np.empty(n)
    # sensitivities[j] tracks d state_k / d u_j (2-vector) for j < k.
    sensitivities = np.zeros((n, 2))
    m = np.zeros((n, n))
    for k, u in enumerate(inputs):
        a, b = model.step_jacobians(state, float(u), dt, substeps)
        for j in range(k):
            sensitivities[j] = a @ sensitivities[j]
        sensitivities[k] = b
        state = model.step(state, float(u), dt, substeps)
        nominal[k] = state.velocity
        m[k, : k + 1] = sensitivities[: k + 1, 0]
    return nominal, m


def _true_cost(
    velocities: np.ndarray, inputs: np.ndarray, reference: float, settings: MpcSettings
) -> float:
    tracking = settings.state_weight * float(np.sum((velocities - reference) ** 2))
    effort = settings.input_weight * float(
        np.sum((inputs - settings.input_reference) ** 2)
    )
    return tracking + effort


def solve_input_sequence(
    model: VehicleModel,
    initial: ModelState,
    reference: float,
    dt: float,
    substeps: int,
    settings: MpcSettings,
    input_min: float,
    input_max: float,
    velocity_min: float = 0.0,
    velocity_max: float = float("inf"),
    warm_start: np.ndarray | None = None,
) -> MpcSolution:
    """Minimize the tracking cost over one horizon.

    The reported cost evaluates the *model rollout* of the returned inputs
    (not the condensed approximation), so it is directly comparable with any
    other candidate sequence.
    """
    n = settings.horizon
    q, r, rho = settings.state_weight, settings.input_weight, settings.state_penalty_weight
    u_ref = settings.input_reference
    inputs = np.zeros(n) if warm_start is None else np.asarray(warm_start, dtype=float).copy()
    inputs = np.clip(inputs, input_min, input_max)

    total_iterations = 0
    hit_cap = False
    for _ in range(settings.relinearizations):
        nominal, m = _linearize(model, initial, inputs, dt, substeps)
        offset = nominal - m @ inputs

        def penalized(u: np.ndarray) -> float:
            velocities = offset + m @ u
            above = np.maximum(velocities - velocity_max, 0.0)
            below = np.maximum(velocity_min - velocities, 0.0)
            return (
                q * float(np.sum((velocities - reference) ** 2))
                + r * float(np.sum((u - u_ref) ** 2))
                + rho * float(np.sum(above**2) + np.sum(below**2))
            )

        # Initial step from the smooth part's curvature; backtracking handles
        # the extra curvature the velocity penalty adds where it is active.
        hessian = 2.0 * (q * (m.T @ m) + r * np.eye(n))
        step0 = 1.0 / max(float(np.linalg.eigvalsh(hessian)[-1]), 1e-12)
        step = step0

        value = penalized(inputs)
        converged = False
        while total_iterations < settings.max_iterations:
            total_iterations += 1
            velocities = offset + m @ inputs
            residual = q * (velocities - reference)
            violation = np.maximum(velocities - velocity_max, 0.0) - np.maximum(
                velocity_min - velocities, 0.0
            )
            gradient = 2.0 * (m.T @ (residual + rho * violation) + r * (inputs - u_ref))

            # Armijo backtracking on the penalized objective: shrink the step
            # until the quadratic upper model holds, so descent is guaranteed
            # for any penalty weight.
            while True:
                candidate = np.clip(inputs - step * gradient, input_min, input_max)
                delta = candidate - inputs
                candidate_value = penalized(candidate)
                bound = value + float(gradient @ delta) + float(delta @ delta) / (2.0 * step)
                if candidate_value <= bound + 1e-12 * (1.0 + abs(value)) or step < 1e-18:
                    break
                step *= 0.5

            movement = float(np.max(np.abs(candidate - inputs)))
            inputs = candidate
            value = candidate_value
            step = min(step * 2.0, step0)
            if movement < settings.tolerance:
                converged = True
                break
        if total_iterations >= settings.max_iterations and not converged:
            hit_cap = True
            break
        # Re-rolling the nonlinear model shifts the linearization point; stop
        # once the solution is stationary across relinearizations.
        refreshed, _ = _linearize(model, initial, inputs, dt, substeps)
        if float(np.max(np.abs(refreshed - nominal))) < settings.tolerance:
            break

    final_velocities = _rollout(model, initial, inputs, dt, substeps)
    return MpcSolution(
        inputs=inputs,
        predicted_velocities=final_velocities,
        cost=_true_cost(final_velocities, inputs, reference, settings),
        iterations=total_iterations,
        hit_iteration_cap=hit_cap,
    )


class MpcController:
    """Stateful loop-facing wrapper: warm starts, force-state belief, cap flag."""

    def __init__(
        self,
        model: VehicleModel,
        dt: float,
        substeps: int,
        settings: MpcSettings,
        input_min: float,
        input_max: float,
        velocity_min: float = 0.0,
        velocity_max: float = float("inf"),
    ):
        self._model = model
        self._dt = dt
        self._substeps = substeps
        self._settings = settings
        self._input_min = input_min
        self._input_max = input_max
        self._velocity_min = velocity_min
        self._velocity_max = velocity_max
        self._warm: np.ndarray | None = None
        self._force_belief = 0.0
        self.hit_iteration_cap = False

    def compute(self, estimate: float, reference: float) -> float:
        initial = ModelState(velocity=estimate, drive_force_n=self._force_belief)
        solution = solve_input_sequence(
            self._model,
            initial,
            reference,
            self._dt,
            self._substeps,
            self._settings,
            self._input_min,
            self._input_max,
            self._velocity_min,
            self._velocity_max,
            warm_start=self._warm,
        )
        if solution.hit_iteration_cap:
            self.hit_iteration_cap = True
        command = float(solution.inputs[0])
        # Shift the solution one step for the next warm start.
        self._warm = np.append(solution.inputs[1:], solution.inputs[-1])
        self._force_belief = self._model.step(
            initial, command, self._dt, self._substeps
        ).drive_force_n
        return command
