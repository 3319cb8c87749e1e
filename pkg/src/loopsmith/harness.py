"""Learning-loop driver: suggest, compose, simulate, evaluate, update.

Each iteration asks the tuner for a trade-off weight, re-composes the loop
when the weight moved at least one grid step or the registry changed, runs
one closed-loop episode, feeds the measured criterion back to the tuner, and
folds the episode's timing samples and inaccuracy estimates into the
registry. Criterion phases come from the scenario; the first iteration after
a phase switch keeps the previous phase's final weight so tuning continues
from where it left off.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .graph import ALPHA_MIN
from .plant.components import (
    PassthroughFilter,
    PidController,
    SaturatingActuator,
    Sensor,
    VelocityKalmanFilter,
)
from .plant.episode import (
    EpisodeReport,
    EpisodeServices,
    EpisodeSettings,
    StepTimer,
    SyntheticStepTimer,
    WallClockStepTimer,
    run_episode,
)
from .plant.models import VehicleModel, build_model
from .plant.mpc import MpcController, MpcSettings
from .registry import Registry
from .scenario import Scenario, build_registry
from .search import CompositionPlan, OrchestrationResult, orchestrate_at
from .tuner import (
    ALPHA_GRID_STEP,
    Context,
    Criterion,
    evaluate_criterion,
    make_tuner,
    observe,
    suggest_alpha,
    with_criterion,
)

# Model predictions inside filters and controllers run at the control period
# (one substep); only the plant and open-loop replays use fine substepping.
PREDICTION_SUBSTEPS = 1

# Tolerance on the grid-step comparison so float noise in alpha differences
# cannot suppress a due re-composition.
_REORCH_EPS = 1e-9


@dataclass(frozen=True)
class IterationRecord:
    """One row of the learning trace."""

    phase_index: int
    iteration: int
    criterion: Criterion
    alpha: float
    reorchestrated: bool
    vertex_ids: tuple[str, ...]
    service_ids: tuple[str, ...]
    composition_cost: float
    criterion_value: float
    rms_tracking_error: float
    mean_step_time_ms: float


@dataclass
class RunResult:
    scenario_name: str
    seed: int
    timing_mode: str
    records: list[IterationRecord]
    episodes: list[EpisodeReport]
    compositions: list[OrchestrationResult]
    final_registry: Registry
    phase_final_alphas: list[float]


def should_reorchestrate(
    current: OrchestrationResult | None, alpha: float, registry_changed: bool
) -> bool:
    """Re-compose exactly when the weight moved a grid step or services changed."""
    if current is None or registry_changed:
        return True
    return abs(alpha - current.alpha) >= ALPHA_GRID_STEP - _REORCH_EPS


def build_episode_services(
    scenario: Scenario,
    plan: CompositionPlan,
    models: dict[str, VehicleModel],
) -> EpisodeServices:
    """Instantiate the composed services with fresh per-episode state."""
    params = scenario.plant_params
    dt = scenario.control_dt_s

    sensor_spec = scenario.service(plan.sensor)
    sensor = Sensor(noise_std=sensor_spec.behavior["noise_std"])

    filter_spec = scenario.service(plan.filter_primary)
    if filter_spec.behavior["type"] == "kalman":
        assert plan.filter_model is not None
        filter_obj = VelocityKalmanFilter(
            model=models[plan.filter_model],
            dt=dt,
            substeps=PREDICTION_SUBSTEPS,
            measurement_noise_std=sensor.noise_std,
            process_noise_var=filter_spec.behavior["process_noise_var"],
            initial_velocity=scenario.initial_velocity,
            initial_variance=filter_spec.behavior["initial_variance"],
        )
    else:
        filter_obj = PassthroughFilter()

    controller_spec = scenario.service(plan.controller_primary)
    if controller_spec.behavior["type"] == "mpc":
        assert plan.controller_model is not None
        controller = MpcController(
            model=models[plan.controller_model],
            dt=dt,
            substeps=PREDICTION_SUBSTEPS,
            settings=MpcSettings(
                horizon=controller_spec.behavior["horizon"],
                state_weight=controller_spec.behavior["state_weight"],
                input_weight=controller_spec.behavior["input_weight"],
                max_iterations=controller_spec.behavior["max_iterations"],
                tolerance=controller_spec.behavior["tolerance"],
            ),
            input_min=-params.a_max,
            input_max=params.a_max,
            velocity_min=0.0,
            velocity_max=params.v_max,
        )
    else:
        controller = PidController(
            kp=controller_spec.behavior["kp"],
            ki=controller_spec.behavior["ki"],
            kd=controller_spec.behavior["kd"],
            dt=dt,
            output_min=-params.a_max,
            output_max=params.a_max,
        )

    actuator_spec = scenario.service(plan.actuator)
    actuator = SaturatingActuator(
        range_min=actuator_spec.behavior["range_min"],
        range_max=actuator_spec.behavior["range_max"],
        resolution=actuator_spec.behavior["resolution"],
    )

    return EpisodeServices(
        sensor_id=plan.sensor,
        sensor=sensor,
        filter_id=plan.filter_primary,
        filter_obj=filter_obj,
        filter_model_id=plan.filter_model,
        controller_id=plan.controller_primary,
        controller=controller,
        controller_model_id=plan.controller_model,
        actuator_id=plan.actuator,
        actuator=actuator,
    )


def _build_models(scenario: Scenario) -> dict[str, VehicleModel]:
    return {
        spec.service_id: build_model(spec.behavior["type"], scenario.plant_params)
        for spec in scenario.services
        if spec.kind.value == "model"
    }


def _make_timer(
    scenario: Scenario, timing_mode: str, rng: np.random.Generator
) -> StepTimer:
    if timing_mode == "wallclock":
        return WallClockStepTimer()
    jitter = scenario.timing_jitter
    return SyntheticStepTimer(
        configured_ms=scenario.configured_taus_ms(),
        jitter_fraction=jitter,
        rng=rng if jitter > 0.0 else None,
    )


def _apply_episode_to_registry(
    registry: Registry, plan: CompositionPlan, report: EpisodeReport
) -> Registry:
    """Fold timing samples and inaccuracy estimates into the registry."""
    for service_id, samples in report.service_times_ms.items():
        for sample in samples:
            registry, _ = registry.update_metrics(service_id, tau_sample_ms=float(sample))

    for model_id, epsilon in report.model_epsilons.items():
        registry, _ = registry.update_metrics(model_id, epsilon=epsilon)

    if plan.filter_model is not None:
        registry, _ = registry.record_pair_epsilon(
            plan.filter_primary, plan.filter_model, report.filter_epsilon
        )
    else:
        registry, _ = registry.update_metrics(plan.filter_primary, epsilon=report.filter_epsilon)

    if plan.controller_model is not None:
        registry, _ = registry.record_pair_epsilon(
            plan.controller_primary, plan.controller_model, report.controller_epsilon
        )
    else:
        registry, _ = registry.update_metrics(
            plan.controller_primary, epsilon=report.controller_epsilon
        )
    return registry


def run_learning_loop(
    scenario: Scenario,
    seed: int | None = None,
    timing_mode: str | None = None,
    progress: Callable[[str], None] | None = None,
) -> RunResult:
    """Run every tuning phase of the scenario and return the full trace."""
    seed = scenario.seed if seed is None else seed
    timing_mode = scenario.timing_mode if timing_mode is None else timing_mode

    registry = build_registry(scenario)
    models = _build_models(scenario)
    context = Context(velocity=scenario.initial_velocity, reference=scenario.reference_velocity)
    settings = EpisodeSettings(
        duration_s=scenario.episode_seconds,
        control_dt_s=scenario.control_dt_s,
        plant_substeps=scenario.plant_substeps,
        initial_velocity=scenario.initial_velocity,
        reference_velocity=scenario.reference_velocity,
    )
    plant = build_model(scenario.plant_model_type, scenario.plant_params)

    bo = make_tuner(scenario.tuner_config, scenario.phases[0].criterion, seed)
    current: OrchestrationResult | None = None
    registry_changed = True
    last_alpha: float | None = None

    records: list[IterationRecord] = []
    episodes: list[EpisodeReport] = []
    compositions: list[OrchestrationResult] = []
    phase_final_alphas: list[float] = []

    for phase_index, phase in enumerate(scenario.phases):
        bo = with_criterion(bo, phase.criterion)
        for iteration in range(phase.iterations):
            if phase_index > 0 and iteration == 0 and last_alpha is not None:
                alpha = last_alpha  # keep tuning from the previous phase's weight
            else:
                alpha = suggest_alpha(bo, context)

            reorchestrate = should_reorchestrate(current, alpha, registry_changed)
            if reorchestrate:
                current = orchestrate_at(registry, alpha)
                registry_changed = False
            assert current is not None

            plan = CompositionPlan.from_composition(current.graph, current.composition)
            services = build_episode_services(scenario, plan, models)
            rng = np.random.default_rng([seed, phase_index, iteration])
            timer = _make_timer(scenario, timing_mode, rng)
            report = run_episode(services, plant, models, settings, timer, rng)

            value = evaluate_criterion(report, phase.criterion)
            bo = observe(bo, context, alpha, value)
            registry = _apply_episode_to_registry(registry, plan, report)
            registry_changed = True
            last_alpha = alpha

            records.append(
                IterationRecord(
                    phase_index=phase_index,
                    iteration=iteration,
                    criterion=phase.criterion,
                    alpha=alpha,
                    reorchestrated=reorchestrate,
                    vertex_ids=current.composition.vertex_ids,
                    service_ids=current.composition.service_ids,
                    composition_cost=current.composition.cost,
                    criterion_value=value,
                    rms_tracking_error=report.rms_tracking_error,
                    mean_step_time_ms=report.mean_step_time_ms,
                )
            )
            episodes.append(report)
            compositions.append(current)
            if progress is not None:
                progress(
                    f"phase {phase_index} iter {iteration:02d} "
                    f"criterion={phase.criterion.value} alpha={alpha:.2f} "
                    f"value={value:.4f} services={','.join(current.composition.service_ids)}"
                )
        phase_final_alphas.append(last_alpha if last_alpha is not None else ALPHA_MIN)

    return RunResult(
        scenario_name=scenario.name,
        seed=seed,
        timing_mode=timing_mode,
        records=records,
        episodes=episodes,
        compositions=compositions,
        final_registry=registry,
        phase_final_alphas=phase_final_alphas,
    )


_TRACE_FIELDS = (
    "phase",
    "iteration",
    "criterion",
    "alpha",
    "reorchestrated",
    "composition",
    "services",
    "cost",
    "criterion_value",
    "rms_tracking_error",
    "mean_step_time_ms",
)


def write_reports(result: RunResult, out_dir: str | Path) -> list[Path]:
    """Write trace.csv, summary.json, per-episode CSVs, composition JSONs.

    Output is bit-reproducible: stable key order, shortest round-trip float
    formatting, and no timestamps.
    """
    out = Path(out_dir)
    episodes_dir = out / "episodes"
    compositions_dir = out / "compositions"
    episodes_dir.mkdir(parents=True, exist_ok=True)
    compositions_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []

    trace_path = out / "trace.csv"
    with trace_path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(_TRACE_FIELDS)
        for record in result.records:
            writer.writerow(
                [
                    record.phase_index,
                    record.iteration,
                    record.criterion.value,
                    repr(record.alpha),
                    int(record.reorchestrated),
                    "|".join(record.vertex_ids),
                    "|".join(record.service_ids),
                    repr(record.composition_cost),
                    repr(record.criterion_value),
                    repr(record.rms_tracking_error),
                    repr(record.mean_step_time_ms),
                ]
            )
    written.append(trace_path)

    for index, (record, report) in enumerate(zip(result.records, result.episodes)):
        episode_path = episodes_dir / f"episode_{index:03d}.csv"
        service_ids = sorted(report.service_times_ms)
        with episode_path.open("w", newline="") as handle:
            writer = csv.writer(handle)
            writer.writerow(
                [
                    "time_s",
                    "reference",
                    "true_velocity",
                    "measured_velocity",
                    "estimated_velocity",
                    "commanded_accel",
                    "applied_accel",
                    "step_total_ms",
                    *[f"time_ms_{sid}" for sid in service_ids],
                ]
            )
            for k in range(len(report.times_s)):
                writer.writerow(
                    [
                        repr(float(report.times_s[k])),
                        repr(float(report.reference[k])),
                        repr(float(report.true_velocity[k])),
                        repr(float(report.measured_velocity[k])),
                        repr(float(report.estimated_velocity[k])),
                        repr(float(report.commanded_accel[k])),
                        repr(float(report.applied_accel[k])),
                        repr(float(report.step_total_ms[k])),
                        *[repr(float(report.service_times_ms[sid][k])) for sid in service_ids],
                    ]
                )
        written.append(episode_path)

        composition_path = compositions_dir / f"iteration_{index:03d}.json"
        payload = result.compositions[index].composition.to_json_dict()
        payload["reorchestrated"] = record.reorchestrated
        composition_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
        written.append(composition_path)

    summary = {
        "scenario": result.scenario_name,
        "seed": result.seed,
        "timing_mode": result.timing_mode,
        "iterations": len(result.records),
        "phases": [
            {
                "criterion": phase_records[0].criterion.value,
                "final_alpha": result.phase_final_alphas[phase_index],
                "final_services": list(phase_records[-1].service_ids),
                "final_criterion_value": phase_records[-1].criterion_value,
                "final_rms_tracking_error": phase_records[-1].rms_tracking_error,
                "final_mean_step_time_ms": phase_records[-1].mean_step_time_ms,
            }
            for phase_index, phase_records in _group_by_phase(result.records)
        ],
        "final_metrics": {
            service.service_id: {
                "tau_ms": service.metrics.tau_ms,
                "epsilon": service.metrics.epsilon,
                "tau_sample_count": service.metrics.tau_sample_count,
            }
            for service in result.final_registry.services()
        },
        "pair_epsilons": {
            f"{primary}+{model}": value
            for (primary, model), value in sorted(result.final_registry.pair_epsilons().items())
        },
    }
    summary_path = out / "summary.json"
    summary_path.write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    written.append(summary_path)
    return written


def _group_by_phase(
    records: list[IterationRecord],
) -> list[tuple[int, list[IterationRecord]]]:
    grouped: dict[int, list[IterationRecord]] = {}
    for record in records:
        grouped.setdefault(record.phase_index, []).append(record)
    return sorted(grouped.items())


@dataclass(frozen=True)
class SweepRecord:
    alpha: float
    vertex_ids: tuple[str, ...]
    service_ids: tuple[str, ...]
    composition_cost: float
    rms_tracking_error: float
    mean_step_time_ms: float


def _sweep_point(args: tuple[Scenario, float, int, int]) -> SweepRecord:
    scenario, alpha, seed, index = args
    registry = build_registry(scenario)
    models = _build_models(scenario)
    orchestration = orchestrate_at(registry, alpha)
    plan = CompositionPlan.from_composition(orchestration.graph, orchestration.composition)
    services = build_episode_services(scenario, plan, models)
    settings = EpisodeSettings(
        duration_s=scenario.episode_seconds,
        control_dt_s=scenario.control_dt_s,
        plant_substeps=scenario.plant_substeps,
        initial_velocity=scenario.initial_velocity,
        reference_velocity=scenario.reference_velocity,
    )
    plant = build_model(scenario.plant_model_type, scenario.plant_params)
    rng = np.random.default_rng([seed, 1_000_003, index])
    timer = _make_timer(scenario, scenario.timing_mode, rng)
    report = run_episode(services, plant, models, settings, timer, rng)
    return SweepRecord(
        alpha=alpha,
        vertex_ids=orchestration.composition.vertex_ids,
        service_ids=orchestration.composition.service_ids,
        composition_cost=orchestration.composition.cost,
        rms_tracking_error=report.rms_tracking_error,
        mean_step_time_ms=report.mean_step_time_ms,
    )


def sweep_alpha(
    scenario: Scenario,
    alphas: Iterable[float],
    seed: int | None = None,
    jobs: int = 1,
) -> list[SweepRecord]:
    """Evaluate one fresh-registry episode per trade-off weight.

    Each grid point runs with isolated seeded state, so results are identical
    for any job count and any execution order.
    """
    seed = scenario.seed if seed is None else seed
    tasks = [(scenario, float(alpha), seed, index) for index, alpha in enumerate(alphas)]
    if jobs <= 1:
        return [_sweep_point(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_sweep_point, tasks))


def write_sweep(records: list[SweepRecord], out_dir: str | Path) -> Path:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "sweep.csv"
    with path.open("w", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(
            ["alpha", "composition", "services", "cost", "rms_tracking_error", "mean_step_time_ms"]
        )
        for record in records:
            writer.writerow(
                [
                    repr(record.alpha),
                    "|".join(record.vertex_ids),
                    "|".join(record.service_ids),
                    repr(record.composition_cost),
                    repr(record.rms_tracking_error),
                    repr(record.mean_step_time_ms),
                ]
            )
    return path
