"""Randomized equivalence checking of the composer against its oracle.

Generates seeded random registries (bounded services per kind, metrics in
[0, 1], occasionally incompatible topic sets), composes each with both the
A* search and the exhaustive oracle, and compares paths and costs. Exposed
as library functions for the test suite and through the CLI for standalone
verification.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .graph import ServiceGraph, build_service_graph
from .registry import (
    Metrics,
    Registry,
    Service,
    ServiceKind,
    TOPIC_ACTUATION,
    TOPIC_CONTROL_SIGNAL,
    TOPIC_MEASUREMENT,
    TOPIC_MODEL,
    TOPIC_STATE_ESTIMATE,
)
from .search import InfeasibleCompositionError, astar_compose, brute_force_compose

_EXTRA_TOPICS = ("aux-a", "aux-b", "aux-c")


def random_registry(rng: np.random.Generator, max_per_kind: int = 4) -> Registry:
    """One random service registry: valid layers, varied topic wiring.

    Most services use the canonical loop topics so the bulk of instances are
    feasible, but requirements occasionally pull from an auxiliary pool that
    only some services guarantee, yielding pruning work and a share of
    infeasible instances.
    """

    def metrics() -> Metrics:
        return Metrics(tau_ms=float(rng.uniform(0.0, 1.0)), epsilon=float(rng.uniform(0.0, 1.0)))

    def maybe_extra(topics: set[str], probability: float) -> frozenset[str]:
        if rng.uniform() < probability:
            topics.add(str(rng.choice(_EXTRA_TOPICS)))
        return frozenset(topics)

    def count() -> int:
        return int(rng.integers(1, max_per_kind + 1))

    services: list[Service] = []

    for index in range(count()):
        services.append(
            Service(
                service_id=f"sens{index}",
                kind=ServiceKind.SENSOR,
                guarantees=maybe_extra({TOPIC_MEASUREMENT}, 0.4),
                requirements=frozenset(),
                metrics=metrics(),
            )
        )

    n_models = int(rng.integers(1, max_per_kind + 1))
    for index in range(n_models):
        services.append(
            Service(
                service_id=f"model{index}",
                kind=ServiceKind.MODEL,
                guarantees=maybe_extra({TOPIC_MODEL}, 0.3),
                requirements=frozenset(),
                metrics=metrics(),
            )
        )

    for index in range(count()):
        requires = {TOPIC_MEASUREMENT}
        if rng.uniform() < 0.5:
            requires.add(TOPIC_MODEL)
        if rng.uniform() < 0.2:
            requires.add(str(rng.choice(_EXTRA_TOPICS)))
        services.append(
            Service(
                service_id=f"filt{index}",
                kind=ServiceKind.FILTER,
                guarantees=maybe_extra({TOPIC_STATE_ESTIMATE}, 0.4),
                requirements=frozenset(requires),
                metrics=metrics(),
            )
        )

    for index in range(count()):
        requires = {TOPIC_STATE_ESTIMATE}
        if rng.uniform() < 0.5:
            requires.add(TOPIC_MODEL)
        if rng.uniform() < 0.2:
            requires.add(str(rng.choice(_EXTRA_TOPICS)))
        services.append(
            Service(
                service_id=f"ctrl{index}",
                kind=ServiceKind.CONTROLLER,
                guarantees=maybe_extra({TOPIC_CONTROL_SIGNAL}, 0.4),
                requirements=frozenset(requires),
                metrics=metrics(),
            )
        )

    for index in range(count()):
        requires = {TOPIC_CONTROL_SIGNAL}
        if rng.uniform() < 0.2:
            requires.add(str(rng.choice(_EXTRA_TOPICS)))
        services.append(
            Service(
                service_id=f"act{index}",
                kind=ServiceKind.ACTUATOR,
                guarantees=frozenset({TOPIC_ACTUATION}),
                requirements=frozenset(requires),
                metrics=metrics(),
            )
        )

    registry = Registry.from_services(services)
    # Measured pair inaccuracies for a random subset of groupable pairs.
    for service in registry.services():
        if service.needs_model and rng.uniform() < 0.3:
            model_id = f"model{int(rng.integers(0, n_models))}"
            registry, _ = registry.record_pair_epsilon(
                service.service_id, model_id, float(rng.uniform(0.0, 1.0))
            )
    return registry


@dataclass
class EquivalenceOutcome:
    instances: int
    feasible: int
    infeasible: int
    mismatches: list[str]

    @property
    def ok(self) -> bool:
        return not self.mismatches


def compare_once(graph: ServiceGraph) -> str | None:
    """Compose one graph both ways; return a description of any mismatch."""
    try:
        fast = astar_compose(graph)
    except InfeasibleCompositionError as exc:
        fast = exc
    try:
        slow = brute_force_compose(graph)
    except InfeasibleCompositionError as exc:
        slow = exc

    if isinstance(fast, InfeasibleCompositionError) != isinstance(slow, InfeasibleCompositionError):
        return f"feasibility disagreement: astar={fast!r} oracle={slow!r}"
    if isinstance(fast, InfeasibleCompositionError):
        assert isinstance(slow, InfeasibleCompositionError)
        if fast.layer != slow.layer:
            return f"uncoverable layer disagreement: astar={fast.layer} oracle={slow.layer}"
        return None
    if fast.vertex_ids != slow.vertex_ids:
        return f"path disagreement: astar={fast.vertex_ids} oracle={slow.vertex_ids}"
    if abs(fast.cost - slow.cost) > 1e-9:
        return f"cost disagreement: astar={fast.cost!r} oracle={slow.cost!r}"
    return None


def run_equivalence_check(
    instances: int, seed: int, max_per_kind: int = 4
) -> EquivalenceOutcome:
    """Compare the composer against the oracle on seeded random instances."""
    rng = np.random.default_rng(seed)
    outcome = EquivalenceOutcome(instances=instances, feasible=0, infeasible=0, mismatches=[])
    for index in range(instances):
        registry = random_registry(rng, max_per_kind)
        alpha = float(rng.uniform(0.1, 0.9))
        graph = build_service_graph(registry, alpha)
        mismatch = compare_once(graph)
        if mismatch is not None:
            outcome.mismatches.append(f"instance {index} (seed {seed}): {mismatch}")
            continue
        try:
            astar_compose(graph)
            outcome.feasible += 1
        except InfeasibleCompositionError:
            outcome.infeasible += 1
    return outcome


def optimal_suffix_cost(
    graph: ServiceGraph, vertex_id: str, provided: frozenset[str]
) -> float | None:
    """Exact cheapest completion cost from a partial-path state, or None.

    Enumerates every completion through the remaining layers, honoring
    feasibility against the provided-topic set. Independent of the search
    implementation; used to validate the heuristic's admissibility.
    """
    start_layer = graph.vertex(vertex_id).layer
    deeper_layers = [layer for layer in graph.layers[start_layer:]]
    best: float | None = None
    for combo in itertools.product(*deeper_layers):
        path = (vertex_id, *combo)
        topics = set(provided)
        cost = 0.0
        feasible = True
        for u, v in zip(path, path[1:]):
            weight = graph.weights.get((u, v))
            topics |= graph.vertex(u).guarantees
            if weight is None or not graph.vertex(v).requirements <= topics:
                feasible = False
                break
            cost += weight
        if feasible and (best is None or cost < best):
            best = cost
    return best
