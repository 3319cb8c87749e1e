"""Shared fixtures: the bundled scenario plus a fast two-phase variant."""

from __future__ import annotations

import pytest

from loopsmith.registry import Registry
from loopsmith.scenario import (
    Scenario,
    build_registry,
    bundled_scenario_path,
    load_scenario,
)


@pytest.fixture(scope="session")
def bundled_scenario() -> Scenario:
    return load_scenario(bundled_scenario_path())


@pytest.fixture(scope="session")
def bundled_registry(bundled_scenario: Scenario) -> Registry:
    # Registry snapshots are immutable, so sharing one across tests is safe.
    return build_registry(bundled_scenario)


# Same service catalog as the bundled scenario, but short episodes and three
# iterations per phase, so harness and CLI tests finish in seconds.
MINI_SCENARIO = """\
[run]
name = "mini-velocity-step"
episode_seconds = 2.0
control_dt_s = 0.05
plant_substeps = 2
seed = 11
timing = "synthetic"
timing_jitter = 0.0

[context]
initial_velocity = 1.0
reference_velocity = 6.0

[plant]
model = "multi_body"

[[phases]]
criterion = "tracking_error"
iterations = 3

[[phases]]
criterion = "computation_time"
iterations = 3

[services.sensor_1]
kind = "sensor"
guarantees = ["measurement"]
initial_tau_ms = 2.0
noise_std = 0.05

[services.sensor_2]
kind = "sensor"
guarantees = ["measurement"]
initial_tau_ms = 0.5
noise_std = 0.2

[services.kalman]
kind = "filter"
type = "kalman"
guarantees = ["state-estimate"]
requires = ["measurement", "model"]
initial_tau_ms = 1.0
initial_epsilon = 0.04
process_noise_var = 5e-4

[services.passthrough]
kind = "filter"
type = "passthrough"
guarantees = ["state-estimate"]
requires = ["measurement"]
initial_tau_ms = 0.1
initial_epsilon = 0.5

[services.point_mass]
kind = "model"
type = "point_mass"
guarantees = ["model"]
initial_tau_ms = 0.6
initial_epsilon = 0.8

[services.single_track]
kind = "model"
type = "single_track"
guarantees = ["model"]
initial_tau_ms = 2.5
initial_epsilon = 0.25

[services.multi_body]
kind = "model"
type = "multi_body"
guarantees = ["model"]
initial_tau_ms = 7.0
initial_epsilon = 0.0

[services.pid]
kind = "controller"
type = "pid"
guarantees = ["control-signal"]
requires = ["state-estimate"]
initial_tau_ms = 1.0
initial_epsilon = 0.5
kp = 2.5
ki = 0.6
kd = 0.0

[services.mpc]
kind = "controller"
type = "mpc"
guarantees = ["control-signal"]
requires = ["state-estimate", "model"]
initial_tau_ms = 20.0
initial_epsilon = 0.1
horizon = 10
state_weight = 1.0
input_weight = 0.1

[services.actuator_1]
kind = "actuator"
guarantees = ["actuation"]
requires = ["control-signal"]
initial_tau_ms = 0.5
range_min = -3.0
range_max = 3.0
resolution = 0.01

[services.actuator_2]
kind = "actuator"
guarantees = ["actuation"]
requires = ["control-signal"]
initial_tau_ms = 0.3
range_min = -3.0
range_max = 3.0
resolution = 0.15
"""


@pytest.fixture()
def mini_scenario_path(tmp_path):
    path = tmp_path / "mini.toml"
    path.write_text(MINI_SCENARIO)
    return path


@pytest.fixture()
def mini_scenario(mini_scenario_path) -> Scenario:
    return load_scenario(mini_scenario_path)
