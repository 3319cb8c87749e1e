"""Weighted layered graph of candidate loop compositions.

Vertices are deployable units: single services, or a (filter|controller,
model) pair for services that cannot run without a model. Layers follow data
flow through one control cycle:

    1 source -> 2 sensors -> 3 filters -> 4 controllers -> 5 actuators -> 6 sink

Edges exist only between consecutive layers and only where the upstream
vertex guarantees at least one topic the downstream vertex requires; edges
from the source and into the sink are unconditional. Each edge is priced on
its *destination* vertex: a convex blend of normalized execution time and
normalized inaccuracy, steered by ``alpha`` (1.0 would mean time is all that
matters; 0.0 would mean accuracy is). Any source-to-sink path therefore sums
the blended cost of every unit it deploys.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping

from .registry import Registry, Service, ServiceKind

SOURCE_VERTEX = "source"
SINK_VERTEX = "sink"
GROUP_SEPARATOR = "+"

ALPHA_MIN = 0.1
ALPHA_MAX = 0.9
SCALE_FLOOR = 1e-12

N_LAYERS = 6
LAYER_SOURCE = 1
LAYER_SENSOR = 2
LAYER_FILTER = 3
LAYER_CONTROLLER = 4
LAYER_ACTUATOR = 5
LAYER_SINK = 6

_LAYER_KINDS: Mapping[int, ServiceKind] = {
    LAYER_SENSOR: ServiceKind.SENSOR,
    LAYER_FILTER: ServiceKind.FILTER,
    LAYER_CONTROLLER: ServiceKind.CONTROLLER,
    LAYER_ACTUATOR: ServiceKind.ACTUATOR,
}


class GraphConstructionError(Exception):
    """Raised when the registry cannot yield a well-formed layered graph."""


def validate_alpha(alpha: float) -> float:
    if not (ALPHA_MIN <= alpha <= ALPHA_MAX):
        raise ValueError(f"alpha must lie in [{ALPHA_MIN}, {ALPHA_MAX}], got {alpha!r}")
    return float(alpha)


@dataclass(frozen=True, slots=True)
class GraphVertex:
    """One deployable unit placed in a layer.

    ``requirements`` are net of topics satisfied inside the unit itself
    (a grouped vertex no longer requires the model topic its own model
    guarantees). ``tau_ms``/``epsilon`` are the unit's combined metrics.
    """

    vertex_id: str
    layer: int
    service_ids: tuple[str, ...]
    guarantees: frozenset[str]
    requirements: frozenset[str]
    tau_ms: float
    epsilon: float


@dataclass(frozen=True)
class ServiceGraph:
    """Immutable weighted layered graph for one value of ``alpha``.

    ``layers`` holds vertex ids per layer (1-indexed by position + 1),
    id-sorted; ``successors`` and ``weights`` define the edges. The
    normalization scales used for edge pricing are recorded so that identical
    topology can be re-priced for a different ``alpha``.
    """

    alpha: float
    vertices: Mapping[str, GraphVertex]
    layers: tuple[tuple[str, ...], ...]
    successors: Mapping[str, tuple[str, ...]]
    weights: Mapping[tuple[str, str], float]
    tau_scale: float
    epsilon_scale: float

    def vertex(self, vertex_id: str) -> GraphVertex:
        return self.vertices[vertex_id]

    def edge_count(self) -> int:
        return len(self.weights)

    def to_json_dict(self) -> dict:
        """JSON-friendly dump (stable ordering) for CLI output and reports."""
        return {
            "alpha": self.alpha,
            "tau_scale": self.tau_scale,
            "epsilon_scale": self.epsilon_scale,
            "layers": [list(layer) for layer in self.layers],
            "vertices": {
                vid: {
                    "layer": v.layer,
                    "services": list(v.service_ids),
                    "guarantees": sorted(v.guarantees),
                    "requirements": sorted(v.requirements),
                    "tau_ms": v.tau_ms,
                    "epsilon": v.epsilon,
                }
                for vid, v in sorted(self.vertices.items())
            },
            "edges": [
                {"from": u, "to": v, "weight": w}
                for (u, v), w in sorted(self.weights.items())
            ],
        }


def group_vertex_id(primary_id: str, model_id: str) -> str:
    return f"{primary_id}{GROUP_SEPARATOR}{model_id}"


def combined_vertex_metrics(
    primary: Service, model: Service, pair_epsilon: float | None = None
) -> tuple[float, float]:
    """Metrics for a (service, model) unit.

    Execution times add: the unit runs both computations each cycle. The
    inaccuracy is the measured end-to-end value for the pair when one exists;
    before any measurement the sum of the parts serves as the initial
    estimate.
    """
    tau_ms = primary.metrics.tau_ms + model.metrics.tau_ms
    if pair_epsilon is not None:
        epsilon = pair_epsilon
    else:
        epsilon = primary.metrics.epsilon + model.metrics.epsilon
    return tau_ms, epsilon


def edge_weight(
    alpha: float, tau_ms: float, epsilon: float, tau_scale: float, epsilon_scale: float
) -> float:
    """Blend of normalized time and inaccuracy; this is the cost of deploying
    the destination vertex."""
    return alpha * (tau_ms / tau_scale) + (1.0 - alpha) * (epsilon / epsilon_scale)


def _service_vertices(registry: Registry) -> list[GraphVertex]:
    models = registry.select_by_kind(ServiceKind.MODEL)
    for service in registry.services():
        if service.service_id in (SOURCE_VERTEX, SINK_VERTEX):
            raise GraphConstructionError(
                f"service id {service.service_id!r} collides with a reserved vertex name"
            )
    vertices: list[GraphVertex] = []
    for layer, kind in _LAYER_KINDS.items():
        for service in registry.select_by_kind(kind):
            if not service.needs_model:
                vertices.append(
                    GraphVertex(
                        vertex_id=service.service_id,
                        layer=layer,
                        service_ids=(service.service_id,),
                        guarantees=service.guarantees,
                        requirements=service.requirements,
                        tau_ms=service.metrics.tau_ms,
                        epsilon=service.metrics.epsilon,
                    )
                )
                continue
            if not models:
                raise GraphConstructionError(
                    f"service {service.service_id!r} requires a model "
                    "but the registry has none"
                )
            # One vertex per (service, model) combination.
            for model in models:
                guarantees = service.guarantees | model.guarantees
                requirements = (service.requirements | model.requirements) - guarantees
                tau_ms, epsilon = combined_vertex_metrics(
                    service, model, registry.pair_epsilon(service.service_id, model.service_id)
                )
                vertices.append(
                    GraphVertex(
                        vertex_id=group_vertex_id(service.service_id, model.service_id),
                        layer=layer,
                        service_ids=(service.service_id, model.service_id),
                        guarantees=guarantees,
                        requirements=requirements,
                        tau_ms=tau_ms,
                        epsilon=epsilon,
                    )
                )
    return vertices


def build_service_graph(registry: Registry, alpha: float) -> ServiceGraph:
    """Build the layered graph over the registry's deployable units.

    Raises ``GraphConstructionError`` if any layer would be empty or a
    model-dependent service has no model to pair with, and ``ValueError`` for
    an out-of-range ``alpha``.
    """
    alpha = validate_alpha(alpha)

    vertices: dict[str, GraphVertex] = {
        SOURCE_VERTEX: GraphVertex(
            SOURCE_VERTEX, LAYER_SOURCE, (), frozenset(), frozenset(), 0.0, 0.0
        ),
        SINK_VERTEX: GraphVertex(
            SINK_VERTEX, LAYER_SINK, (), frozenset(), frozenset(), 0.0, 0.0
        ),
    }
    for vertex in _service_vertices(registry):
        vertices[vertex.vertex_id] = vertex

    layers: list[tuple[str, ...]] = []
    for layer in range(1, N_LAYERS + 1):
        ids = tuple(sorted(v.vertex_id for v in vertices.values() if v.layer == layer))
        if not ids:
            kind = _LAYER_KINDS[layer].value
            raise GraphConstructionError(f"layer {layer} is empty: no {kind} services")
        layers.append(ids)

    service_vertices = [v for v in vertices.values() if v.layer not in (LAYER_SOURCE, LAYER_SINK)]
    tau_scale = max(max(v.tau_ms for v in service_vertices), SCALE_FLOOR)
    epsilon_scale = max(max(v.epsilon for v in service_vertices), SCALE_FLOOR)

    successors: dict[str, tuple[str, ...]] = {}
    weights: dict[tuple[str, str], float] = {}
    for upper, lower in zip(layers, layers[1:]):
        for u in upper:
            outgoing = []
            for v in lower:
                uv, vv = vertices[u], vertices[v]
                # Source and sink edges are unconditional; service-to-service
                # edges need at least one guaranteed topic the next unit requires.
                if uv.layer != LAYER_SOURCE and vv.layer != LAYER_SINK:
                    if not (uv.guarantees & vv.requirements):
                        continue
                outgoing.append(v)
                weights[(u, v)] = edge_weight(
                    alpha, vv.tau_ms, vv.epsilon, tau_scale, epsilon_scale
                )
            successors[u] = tuple(outgoing)
    successors[SINK_VERTEX] = ()

    return ServiceGraph(
        alpha=alpha,
        vertices=vertices,
        layers=tuple(layers),
        successors=successors,
        weights=weights,
        tau_scale=tau_scale,
        epsilon_scale=epsilon_scale,
    )


def reweight(graph: ServiceGraph, alpha: float) -> ServiceGraph:
    """Re-price every edge for a new ``alpha`` without rebuilding topology.

    The recorded normalization scales are kept so costs stay comparable
    across ``alpha`` values for the same graph.
    """
    alpha = validate_alpha(alpha)
    weights = {
        (u, v): edge_weight(
            alpha,
            graph.vertices[v].tau_ms,
            graph.vertices[v].epsilon,
            graph.tau_scale,
            graph.epsilon_scale,
        )
        for (u, v) in graph.weights
    }
    return ServiceGraph(
        alpha=alpha,
        vertices=graph.vertices,
        layers=graph.layers,
        successors=graph.successors,
        weights=weights,
        tau_scale=graph.tau_scale,
        epsilon_scale=graph.epsilon_scale,
    )
