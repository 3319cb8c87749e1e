"""Composition search: frozen optima, feasibility, heuristic, orchestration."""

from __future__ import annotations

import pytest

from loopsmith.graph import (
    SINK_VERTEX,
    SOURCE_VERTEX,
    build_service_graph,
)
from loopsmith.registry import (
    Metrics,
    Registry,
    Service,
    ServiceKind,
    TOPIC_ACTUATION,
    TOPIC_CONTROL_SIGNAL,
    TOPIC_MEASUREMENT,
    TOPIC_STATE_ESTIMATE,
)
from loopsmith.search import (
    CompositionPlan,
    InfeasibleCompositionError,
    SearchTrace,
    astar_compose,
    brute_force_compose,
    heuristic_from_layer,
    layer_floor_costs,
    orchestrate,
    orchestrate_at,
    path_cost,
    path_feasible,
)
from loopsmith.tuner import make_tuner, Context

# Optimal compositions of the bundled registry at its configured metrics.
# Low alpha buys accuracy (model-based Kalman + MPC on the detailed model);
# high alpha buys speed (cheap sensor, passthrough, PID, coarse actuator).
BUNDLED_OPTIMA = {
    0.1: (
        (SOURCE_VERTEX, "sensor_1", "kalman+multi_body", "mpc+multi_body", "actuator_1", SINK_VERTEX),
        0.33055555555555555,
    ),
    0.5: (
        (SOURCE_VERTEX, "sensor_1", "kalman+multi_body", "pid", "actuator_1", SINK_VERTEX),
        0.5416666666666666,
    ),
    0.9: (
        (SOURCE_VERTEX, "sensor_2", "passthrough", "pid", "actuator_2", SINK_VERTEX),
        0.19944444444444442,
    ),
}


def _service(
    service_id: str,
    kind: ServiceKind,
    guarantees: set[str],
    requirements: set[str] = frozenset(),
    tau_ms: float = 1.0,
    epsilon: float = 0.1,
) -> Service:
    return Service(
        service_id=service_id,
        kind=kind,
        guarantees=frozenset(guarantees),
        requirements=frozenset(requirements),
        metrics=Metrics(tau_ms=tau_ms, epsilon=epsilon),
    )


@pytest.mark.parametrize("alpha", sorted(BUNDLED_OPTIMA))
def test_bundled_optimum_is_frozen(bundled_registry, alpha):
    graph = build_service_graph(bundled_registry, alpha)
    composition = astar_compose(graph)
    expected_path, expected_cost = BUNDLED_OPTIMA[alpha]
    assert composition.vertex_ids == expected_path
    assert composition.cost == pytest.approx(expected_cost, rel=1e-12)
    assert composition.alpha == alpha
    assert path_feasible(graph, composition.vertex_ids)
    assert path_cost(graph, composition.vertex_ids) == pytest.approx(
        composition.cost, rel=1e-12
    )
    assert sum(composition.edge_weights) == pytest.approx(composition.cost, rel=1e-12)


@pytest.mark.parametrize("alpha", sorted(BUNDLED_OPTIMA))
def test_brute_force_agrees_on_bundled(bundled_registry, alpha):
    graph = build_service_graph(bundled_registry, alpha)
    fast = astar_compose(graph)
    slow = brute_force_compose(graph)
    assert fast.vertex_ids == slow.vertex_ids
    assert fast.cost == pytest.approx(slow.cost, abs=1e-12)


def test_grouped_service_ids_expand_shared_model(bundled_registry):
    graph = build_service_graph(bundled_registry, alpha=0.1)
    composition = astar_compose(graph)
    # Both the filter and the controller carry their own model instance.
    assert composition.service_ids == (
        "sensor_1",
        "kalman",
        "multi_body",
        "mpc",
        "multi_body",
        "actuator_1",
    )


def test_single_chain_cost_is_edge_sum():
    registry = Registry.from_services(
        [
            _service("s", ServiceKind.SENSOR, {TOPIC_MEASUREMENT}, tau_ms=2.0, epsilon=0.3),
            _service(
                "f",
                ServiceKind.FILTER,
                {TOPIC_STATE_ESTIMATE},
                {TOPIC_MEASUREMENT},
                tau_ms=1.0,
                epsilon=0.2,
            ),
            _service(
                "c",
                ServiceKind.CONTROLLER,
                {TOPIC_CONTROL_SIGNAL},
                {TOPIC_STATE_ESTIMATE},
                tau_ms=4.0,
                epsilon=0.1,
            ),
            _service(
                "a",
                ServiceKind.ACTUATOR,
                {TOPIC_ACTUATION},
                {TOPIC_CONTROL_SIGNAL},
                tau_ms=0.5,
                epsilon=0.05,
            ),
        ]
    )
    graph = build_service_graph(registry, alpha=0.4)
    composition = astar_compose(graph)
    assert composition.vertex_ids == (SOURCE_VERTEX, "s", "f", "c", "a", SINK_VERTEX)
    assert composition.cost == pytest.approx(sum(graph.weights.values()))


def test_cost_tie_breaks_to_lexicographic_path():
    # Two sensors with identical metrics tie on cost exactly.
    registry = Registry.from_services(
        [
            _service("sensor_b", ServiceKind.SENSOR, {TOPIC_MEASUREMENT}),
            _service("sensor_a", ServiceKind.SENSOR, {TOPIC_MEASUREMENT}),
            _service(
                "f", ServiceKind.FILTER, {TOPIC_STATE_ESTIMATE}, {TOPIC_MEASUREMENT}
            ),
            _service(
                "c",
                ServiceKind.CONTROLLER,
                {TOPIC_CONTROL_SIGNAL},
                {TOPIC_STATE_ESTIMATE},
            ),
            _service(
                "a", ServiceKind.ACTUATOR, {TOPIC_ACTUATION}, {TOPIC_CONTROL_SIGNAL}
            ),
        ]
    )
    graph = build_service_graph(registry, alpha=0.5)
    assert astar_compose(graph).vertex_ids[1] == "sensor_a"
    assert brute_force_compose(graph).vertex_ids[1] == "sensor_a"


def _aux_registry() -> Registry:
    """Controller needs an extra topic only the expensive sensor guarantees."""
    return Registry.from_services(
        [
            _service(
                "s_poor",
                ServiceKind.SENSOR,
                {TOPIC_MEASUREMENT},
                tau_ms=0.1,
                epsilon=0.01,
            ),
            _service(
                "s_rich",
                ServiceKind.SENSOR,
                {TOPIC_MEASUREMENT, "aux"},
                tau_ms=9.0,
                epsilon=0.9,
            ),
            _service(
                "f", ServiceKind.FILTER, {TOPIC_STATE_ESTIMATE}, {TOPIC_MEASUREMENT}
            ),
            _service(
                "c",
                ServiceKind.CONTROLLER,
                {TOPIC_CONTROL_SIGNAL},
                {TOPIC_STATE_ESTIMATE, "aux"},
            ),
            _service(
                "a", ServiceKind.ACTUATOR, {TOPIC_ACTUATION}, {TOPIC_CONTROL_SIGNAL}
            ),
        ]
    )


def test_feasibility_constrains_more_than_edges():
    graph = build_service_graph(_aux_registry(), alpha=0.5)
    composition = astar_compose(graph)
    # The cheap sensor has edges forward, but only the rich sensor lets the
    # controller's aux requirement be met downstream.
    assert "s_rich" in composition.vertex_ids
    assert brute_force_compose(graph).vertex_ids == composition.vertex_ids
    poor_path = (SOURCE_VERTEX, "s_poor", "f", "c", "a", SINK_VERTEX)
    assert not path_feasible(graph, poor_path)


def test_infeasible_reports_first_uncoverable_layer():
    registry = _aux_registry()
    registry, _ = registry.remove("s_rich")
    graph = build_service_graph(registry, alpha=0.5)
    with pytest.raises(InfeasibleCompositionError) as fast_err:
        astar_compose(graph)
    with pytest.raises(InfeasibleCompositionError) as slow_err:
        brute_force_compose(graph)
    assert fast_err.value.layer == 4
    assert slow_err.value.layer == 4
    assert "layer 4" in str(fast_err.value)
    assert "no feasible composition" in str(fast_err.value)


def test_layer_floors_and_heuristic(bundled_registry):
    graph = build_service_graph(bundled_registry, alpha=0.5)
    floors = layer_floor_costs(graph)
    assert heuristic_from_layer(floors, 6) == 0.0
    assert heuristic_from_layer(floors, 5) == 0.0  # sink edges cost nothing
    # Deeper-layer estimates nest.
    for layer in range(1, 6):
        assert heuristic_from_layer(floors, layer) >= heuristic_from_layer(
            floors, layer + 1
        )


def test_heuristic_exact_on_single_chain():
    registry = Registry.from_services(
        [
            _service("s", ServiceKind.SENSOR, {TOPIC_MEASUREMENT}, tau_ms=2.0, epsilon=0.3),
            _service(
                "f",
                ServiceKind.FILTER,
                {TOPIC_STATE_ESTIMATE},
                {TOPIC_MEASUREMENT},
                tau_ms=1.0,
                epsilon=0.2,
            ),
            _service(
                "c",
                ServiceKind.CONTROLLER,
                {TOPIC_CONTROL_SIGNAL},
                {TOPIC_STATE_ESTIMATE},
                tau_ms=4.0,
                epsilon=0.1,
            ),
            _service(
                "a",
                ServiceKind.ACTUATOR,
                {TOPIC_ACTUATION},
                {TOPIC_CONTROL_SIGNAL},
                tau_ms=0.5,
                epsilon=0.05,
            ),
        ]
    )
    graph = build_service_graph(registry, alpha=0.4)
    floors = layer_floor_costs(graph)
    # With one vertex per layer the floor sum is the true remaining cost.
    assert heuristic_from_layer(floors, 1) == pytest.approx(
        astar_compose(graph).cost
    )


def test_brute_force_guards_against_blowup(bundled_registry):
    graph = build_service_graph(bundled_registry, alpha=0.5)
    with pytest.raises(ValueError):
        brute_force_compose(graph, max_paths=10)


def test_search_trace_records_expansions(bundled_registry):
    graph = build_service_graph(bundled_registry, alpha=0.5)
    trace = SearchTrace()
    astar_compose(graph, trace=trace)
    assert trace.pushed > 0
    first_vertex, first_provided, first_g = trace.expanded[0]
    assert first_vertex == SOURCE_VERTEX
    assert first_provided == frozenset()
    assert first_g == 0.0


def test_composition_plan_extraction(bundled_registry):
    low = orchestrate_at(bundled_registry, 0.1)
    plan = CompositionPlan.from_composition(low.graph, low.composition)
    assert plan.sensor == "sensor_1"
    assert plan.filter_primary == "kalman"
    assert plan.filter_model == "multi_body"
    assert plan.controller_primary == "mpc"
    assert plan.controller_model == "multi_body"
    assert plan.actuator == "actuator_1"

    high = orchestrate_at(bundled_registry, 0.9)
    plan = CompositionPlan.from_composition(high.graph, high.composition)
    assert plan.filter_primary == "passthrough"
    assert plan.filter_model is None
    assert plan.controller_primary == "pid"
    assert plan.controller_model is None


def test_composition_to_json_dict(bundled_registry):
    composition = orchestrate_at(bundled_registry, 0.1).composition
    payload = composition.to_json_dict()
    assert payload["alpha"] == 0.1
    assert payload["cost"] == pytest.approx(BUNDLED_OPTIMA[0.1][1], rel=1e-12)
    assert payload["vertices"] == list(BUNDLED_OPTIMA[0.1][0])
    assert payload["services"][0] == "sensor_1"
    assert len(payload["edge_weights"]) == len(payload["vertices"]) - 1


def test_orchestrate_uses_midpoint_alpha_before_observations(bundled_registry):
    state = make_tuner()
    result = orchestrate(bundled_registry, state, Context(velocity=1.0, reference=6.0))
    fixed = orchestrate_at(bundled_registry, 0.5)
    assert result.alpha == 0.5
    assert result.composition.vertex_ids == fixed.composition.vertex_ids
    assert result.composition.cost == pytest.approx(fixed.composition.cost)


def test_registry_change_changes_composition(bundled_registry):
    smaller, _ = bundled_registry.remove("mpc")
    composition = orchestrate_at(smaller, 0.1).composition
    assert "mpc+multi_body" not in composition.vertex_ids
    assert "pid" in composition.vertex_ids


def test_orchestrate_at_validates_alpha(bundled_registry):
    with pytest.raises(ValueError):
        orchestrate_at(bundled_registry, 0.95)
