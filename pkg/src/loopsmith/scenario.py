"""Scenario files: schema, validation, and registry construction.

A scenario is a TOML file with one section per service plus run geometry,
plant constants, tuning phases, and tuner hyperparameters. Validation is
strict: unknown keys are rejected and every error names the exact field path
(syntax errors keep the parser's line information).
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - version shim
    import tomli as tomllib

from .plant.models import MODEL_TYPE_NAMES, PlantParams
from .registry import (
    Metrics,
    Registry,
    RegistryError,
    Service,
    ServiceKind,
    TOPIC_MODEL,
)
from .tuner import Criterion, TunerConfig

FILTER_TYPES = ("kalman", "passthrough")
CONTROLLER_TYPES = ("pid", "mpc")
TIMING_MODES = ("synthetic", "wallclock")


class ScenarioError(Exception):
    """Invalid scenario file; the message names the offending field."""

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.field_path = path


@dataclass(frozen=True)
class Phase:
    criterion: Criterion
    iterations: int


@dataclass(frozen=True)
class ServiceSpec:
    """One service section: contract, initial estimates, behavior config."""

    service_id: str
    kind: ServiceKind
    guarantees: frozenset[str]
    requirements: frozenset[str]
    initial_tau_ms: float
    initial_epsilon: float
    behavior: Mapping[str, Any] = field(default_factory=dict)

    def to_service(self) -> Service:
        return Service(
            service_id=self.service_id,
            kind=self.kind,
            guarantees=self.guarantees,
            requirements=self.requirements,
            metrics=Metrics(tau_ms=self.initial_tau_ms, epsilon=self.initial_epsilon),
        )


@dataclass(frozen=True)
class Scenario:
    name: str
    episode_seconds: float
    control_dt_s: float
    plant_substeps: int
    seed: int
    timing_mode: str
    timing_jitter: float
    initial_velocity: float
    reference_velocity: float
    plant_model_type: str
    plant_params: PlantParams
    tuner_config: TunerConfig
    phases: tuple[Phase, ...]
    services: tuple[ServiceSpec, ...]

    def service(self, service_id: str) -> ServiceSpec:
        for spec in self.services:
            if spec.service_id == service_id:
                return spec
        raise KeyError(service_id)

    def configured_taus_ms(self) -> dict[str, float]:
        return {spec.service_id: spec.initial_tau_ms for spec in self.services}


def build_registry(scenario: Scenario) -> Registry:
    """Fresh registry snapshot seeded with the scenario's initial estimates."""
    return Registry.from_services(spec.to_service() for spec in scenario.services)


class _Table:
    """One TOML table with strict key accounting."""

    def __init__(self, path: str, data: Mapping[str, Any]):
        self.path = path
        self.data = data
        self.seen: set[str] = set()

    def _fetch(self, key: str, kind: type | tuple[type, ...], required: bool, default: Any) -> Any:
        self.seen.add(key)
        if key not in self.data:
            if required:
                raise ScenarioError(f"{self.path}.{key}", "required field is missing")
            return default
        value = self.data[key]
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
        if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
            expected = kind.__name__ if isinstance(kind, type) else "/".join(k.__name__ for k in kind)
            raise ScenarioError(f"{self.path}.{key}", f"expected {expected}, got {type(value).__name__}")
        return value

    def number(self, key: str, *, required: bool = True, default: float | None = None,
               minimum: float | None = None, maximum: float | None = None,
               exclusive_minimum: bool = False) -> float:
        value = self._fetch(key, float, required, default)
        if value is None:
            return value
        value = float(value)
        if minimum is not None:
            if exclusive_minimum and value <= minimum:
                raise ScenarioError(f"{self.path}.{key}", f"must be > {minimum}")
            if not exclusive_minimum and value < minimum:
                raise ScenarioError(f"{self.path}.{key}", f"must be >= {minimum}")
        if maximum is not None and value > maximum:
            raise ScenarioError(f"{self.path}.{key}", f"must be <= {maximum}")
        return value

    def integer(self, key: str, *, required: bool = True, default: int | None = None,
                minimum: int | None = None) -> int:
        value = self._fetch(key, int, required, default)
        if value is None:
            return value
        if minimum is not None and value < minimum:
            raise ScenarioError(f"{self.path}.{key}", f"must be >= {minimum}")
        return int(value)

    def text(self, key: str, *, required: bool = True, default: str | None = None,
             choices: tuple[str, ...] | None = None) -> str:
        value = self._fetch(key, str, required, default)
        if value is None:
            return value
        if choices is not None and value not in choices:
            raise ScenarioError(f"{self.path}.{key}", f"must be one of {sorted(choices)}")
        return value

    def string_list(self, key: str, *, required: bool = True,
                    default: tuple[str, ...] = ()) -> tuple[str, ...]:
        value = self._fetch(key, list, required, list(default))
        for item in value:
            if not isinstance(item, str):
                raise ScenarioError(f"{self.path}.{key}", "must be a list of strings")
        return tuple(value)

    def reject_unknown(self) -> None:
        unknown = set(self.data) - self.seen
        if unknown:
            key = sorted(unknown)[0]
            raise ScenarioError(f"{self.path}.{key}", "unknown field")


def _parse_service(service_id: str, raw: Any) -> ServiceSpec:
    path = f"services.{service_id}"
    if not isinstance(raw, dict):
        raise ScenarioError(path, "must be a table")
    table = _Table(path, raw)
    kind_name = table.text("kind", choices=tuple(k.value for k in ServiceKind))
    kind = ServiceKind(kind_name)
    guarantees = frozenset(table.string_list("guarantees"))
    requirements = frozenset(table.string_list("requires", required=False))
    tau = table.number("initial_tau_ms", minimum=0.0)

    behavior: dict[str, Any] = {}
    if kind is ServiceKind.SENSOR:
        noise_std = table.number("noise_std", minimum=0.0)
        behavior = {"noise_std": noise_std}
        epsilon = noise_std
    elif kind is ServiceKind.ACTUATOR:
        range_min = table.number("range_min")
        range_max = table.number("range_max")
        if range_min >= range_max:
            raise ScenarioError(f"{path}.range_min", "must be < range_max")
        resolution = table.number("resolution", minimum=0.0)
        behavior = {"range_min": range_min, "range_max": range_max, "resolution": resolution}
        epsilon = resolution / (range_max - range_min)
    elif kind is ServiceKind.MODEL:
        type_name = table.text("type", choices=MODEL_TYPE_NAMES)
        epsilon = table.number("initial_epsilon", minimum=0.0)
        behavior = {"type": type_name}
    elif kind is ServiceKind.FILTER:
        type_name = table.text("type", choices=FILTER_TYPES)
        epsilon = table.number("initial_epsilon", minimum=0.0)
        behavior = {"type": type_name}
        if type_name == "kalman":
            behavior["process_noise_var"] = table.number("process_noise_var", minimum=0.0)
            behavior["initial_variance"] = table.number(
                "initial_variance", required=False, default=1.0, minimum=0.0, exclusive_minimum=True
            )
            if TOPIC_MODEL not in requirements:
                raise ScenarioError(f"{path}.requires", "a kalman filter must require the model topic")
        elif TOPIC_MODEL in requirements:
            raise ScenarioError(f"{path}.requires", "a passthrough filter cannot require a model")
    elif kind is ServiceKind.CONTROLLER:
        type_name = table.text("type", choices=CONTROLLER_TYPES)
        epsilon = table.number("initial_epsilon", minimum=0.0)
        behavior = {"type": type_name}
        if type_name == "pid":
            behavior["kp"] = table.number("kp", minimum=0.0)
            behavior["ki"] = table.number("ki", minimum=0.0)
            behavior["kd"] = table.number("kd", minimum=0.0)
            if TOPIC_MODEL in requirements:
                raise ScenarioError(f"{path}.requires", "a pid controller cannot require a model")
        else:
            behavior["horizon"] = table.integer("horizon", minimum=1)
            behavior["state_weight"] = table.number("state_weight", minimum=0.0)
            behavior["input_weight"] = table.number("input_weight", minimum=0.0)
            behavior["max_iterations"] = table.integer("max_iterations", required=False,
                                                       default=200, minimum=1)
            behavior["tolerance"] = table.number("tolerance", required=False, default=1e-6,
                                                 minimum=0.0, exclusive_minimum=True)
            if TOPIC_MODEL not in requirements:
                raise ScenarioError(f"{path}.requires", "an mpc controller must require the model topic")
    else:  # process services register but never join compositions
        epsilon = table.number("initial_epsilon", minimum=0.0)

    table.reject_unknown()
    try:
        spec = ServiceSpec(
            service_id=service_id,
            kind=kind,
            guarantees=guarantees,
            requirements=requirements,
            initial_tau_ms=tau,
            initial_epsilon=epsilon,
            behavior=behavior,
        )
        spec.to_service()  # surface contract violations with the field path
    except RegistryError as exc:
        raise ScenarioError(path, str(exc)) from None
    return spec


def _parse_scenario(data: Mapping[str, Any]) -> Scenario:
    root = _Table("", dict(data))
    for key in ("run", "context", "plant", "phases", "services"):
        root.seen.add(key)
        if key not in data:
            raise ScenarioError(key, "required section is missing")
    root.seen.add("tuner")
    root.reject_unknown()

    run = _Table("run", data["run"])
    name = run.text("name")
    episode_seconds = run.number("episode_seconds", minimum=0.0, exclusive_minimum=True)
    control_dt = run.number("control_dt_s", minimum=0.0, exclusive_minimum=True)
    if control_dt > episode_seconds:
        raise ScenarioError("run.control_dt_s", "must not exceed episode_seconds")
    plant_substeps = run.integer("plant_substeps", required=False, default=5, minimum=1)
    seed = run.integer("seed", required=False, default=0, minimum=0)
    timing_mode = run.text("timing", required=False, default="synthetic", choices=TIMING_MODES)
    timing_jitter = run.number("timing_jitter", required=False, default=0.0, minimum=0.0)
    run.reject_unknown()

    context = _Table("context", data["context"])
    initial_velocity = context.number("initial_velocity", minimum=0.0)
    reference_velocity = context.number("reference_velocity", minimum=0.0)
    context.reject_unknown()

    plant = _Table("plant", data["plant"])
    plant_model_type = plant.text("model", required=False, default="multi_body",
                                  choices=MODEL_TYPE_NAMES)
    params = PlantParams(
        mass_kg=plant.number("mass_kg", required=False, default=1500.0, minimum=0.0,
                             exclusive_minimum=True),
        drag_coeff=plant.number("drag_coeff", required=False, default=0.4, minimum=0.0),
        rolling_coeff=plant.number("rolling_coeff", required=False, default=0.012, minimum=0.0),
        actuator_lag_s=plant.number("actuator_lag_s", required=False, default=0.2, minimum=0.0,
                                    exclusive_minimum=True),
        traction_cap_n=plant.number("traction_cap_n", required=False, default=4000.0, minimum=0.0,
                                    exclusive_minimum=True),
        v_max=plant.number("v_max", required=False, default=15.0, minimum=0.0,
                           exclusive_minimum=True),
        a_max=plant.number("a_max", required=False, default=3.0, minimum=0.0,
                           exclusive_minimum=True),
    )
    plant.reject_unknown()
    if initial_velocity > params.v_max:
        raise ScenarioError("context.initial_velocity", f"must not exceed plant v_max ({params.v_max})")
    if reference_velocity > params.v_max:
        raise ScenarioError("context.reference_velocity", f"must not exceed plant v_max ({params.v_max})")

    tuner_raw = data.get("tuner", {})
    if not isinstance(tuner_raw, dict):
        raise ScenarioError("tuner", "must be a table")
    tuner = _Table("tuner", tuner_raw)
    tuner_config = TunerConfig(
        lengthscale=tuner.number("lengthscale", required=False, default=0.3, minimum=0.0,
                                 exclusive_minimum=True),
        signal_variance=tuner.number("signal_variance", required=False, default=1.0, minimum=0.0,
                                     exclusive_minimum=True),
        noise_variance=tuner.number("noise_variance", required=False, default=1e-4, minimum=0.0,
                                    exclusive_minimum=True),
        beta=tuner.number("beta", required=False, default=2.0, minimum=0.0, exclusive_minimum=True),
        context_scale=tuner.number("context_scale", required=False, default=params.v_max,
                                   minimum=0.0, exclusive_minimum=True),
    )
    tuner.reject_unknown()

    phases_raw = data["phases"]
    if not isinstance(phases_raw, list) or not phases_raw:
        raise ScenarioError("phases", "must be a non-empty array of tables")
    phases = []
    for index, raw in enumerate(phases_raw):
        if not isinstance(raw, dict):
            raise ScenarioError(f"phases[{index}]", "must be a table")
        phase = _Table(f"phases[{index}]", raw)
        criterion = phase.text("criterion", choices=tuple(c.value for c in Criterion))
        iterations = phase.integer("iterations", minimum=1)
        phase.reject_unknown()
        phases.append(Phase(criterion=Criterion(criterion), iterations=iterations))

    services_raw = data["services"]
    if not isinstance(services_raw, dict) or not services_raw:
        raise ScenarioError("services", "must contain at least one service table")
    services = tuple(
        _parse_service(service_id, raw) for service_id, raw in sorted(services_raw.items())
    )

    scenario = Scenario(
        name=name,
        episode_seconds=episode_seconds,
        control_dt_s=control_dt,
        plant_substeps=plant_substeps,
        seed=seed,
        timing_mode=timing_mode,
        timing_jitter=timing_jitter,
        initial_velocity=initial_velocity,
        reference_velocity=reference_velocity,
        plant_model_type=plant_model_type,
        plant_params=params,
        tuner_config=tuner_config,
        phases=tuple(phases),
        services=services,
    )
    try:
        build_registry(scenario)
    except RegistryError as exc:
        raise ScenarioError("services", str(exc)) from None
    return scenario


def load_scenario(path: str | Path) -> Scenario:
    """Parse and validate a scenario file.

    Raises ``ScenarioError`` with the offending field path; TOML syntax
    errors surface with the parser's line/column information.
    """
    path = Path(path)
    try:
        with path.open("rb") as handle:
            data = tomllib.load(handle)
    except FileNotFoundError:
        raise ScenarioError(str(path), "scenario file not found") from None
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioError(str(path), f"TOML syntax error: {exc}") from None
    return _parse_scenario(data)


def bundled_scenario_path() -> Path:
    """Path of the packaged velocity-step scenario."""
    return Path(str(resources.files("loopsmith").joinpath("data/velocity_step.toml")))
