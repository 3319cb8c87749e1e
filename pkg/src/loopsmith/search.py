"""Cost-optimal feasible path search over the layered service graph.

A source-to-sink path is *feasible* when every vertex's requirements are
covered by the union of guarantees of the vertices before it on the path.
Edge existence only checks pairwise overlap, so feasibility is the stronger
condition and the search state must carry the set of topics provided so far.

``astar_compose`` runs A* with an admissible, consistent heuristic (the sum
over deeper layers of the cheapest edge into each layer); ``brute_force_compose``
enumerates every layer combination and exists as a slow reference oracle.
Both break cost ties by the lexicographically smallest vertex-id sequence, so
they are interchangeable result-for-result.
"""

from __future__ import annotations

import heapq
import itertools
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from .graph import (
    LAYER_CONTROLLER,
    LAYER_FILTER,
    LAYER_SINK,
    LAYER_SOURCE,
    SINK_VERTEX,
    SOURCE_VERTEX,
    ServiceGraph,
    build_service_graph,
)

if TYPE_CHECKING:  # pragma: no cover - typing only
    from .registry import Registry
    from .tuner import BoState, Context


class InfeasibleCompositionError(Exception):
    """No feasible source-to-sink path exists.

    ``layer`` is the first layer the search could not cover: every partial
    path ends before it, either for lack of edges or of required topics.
    """

    def __init__(self, layer: int):
        super().__init__(f"no feasible composition: layer {layer} cannot be covered")
        self.layer = layer


@dataclass(frozen=True)
class Composition:
    """A feasible loop composition: one vertex per layer, cheapest overall."""

    vertex_ids: tuple[str, ...]
    service_ids: tuple[str, ...]
    edge_weights: tuple[float, ...]
    cost: float
    alpha: float

    def to_json_dict(self) -> dict:
        return {
            "alpha": self.alpha,
            "cost": self.cost,
            "vertices": list(self.vertex_ids),
            "services": list(self.service_ids),
            "edge_weights": list(self.edge_weights),
        }


@dataclass
class SearchTrace:
    """Optional diagnostics collected during A* (used by admissibility tests)."""

    expanded: list[tuple[str, frozenset[str], float]] = field(default_factory=list)
    pushed: int = 0


def path_feasible(graph: ServiceGraph, vertex_ids: tuple[str, ...]) -> bool:
    """Independent feasibility check: upstream guarantees cover each vertex."""
    provided: frozenset[str] = frozenset()
    for vertex_id in vertex_ids:
        vertex = graph.vertex(vertex_id)
        if not vertex.requirements <= provided:
            return False
        provided = provided | vertex.guarantees
    return True


def path_cost(graph: ServiceGraph, vertex_ids: tuple[str, ...]) -> float:
    """Sum of edge weights along the path, accumulated in path order."""
    cost = 0.0
    for u, v in zip(vertex_ids, vertex_ids[1:]):
        cost += graph.weights[(u, v)]
    return cost


def layer_floor_costs(graph: ServiceGraph) -> dict[int, float]:
    """Minimum incoming-edge weight per layer (infinity if none reaches it)."""
    floors: dict[int, float] = {layer: float("inf") for layer in range(2, LAYER_SINK + 1)}
    for (_, v), weight in graph.weights.items():
        layer = graph.vertex(v).layer
        if weight < floors[layer]:
            floors[layer] = weight
    return floors


def heuristic_from_layer(floors: dict[int, float], layer: int) -> float:
    """Admissible remaining-cost bound: every deeper layer must be entered
    at least once, paying no less than its cheapest incoming edge."""
    total = 0.0
    for deeper in range(layer + 1, LAYER_SINK + 1):
        total += floors[deeper]
    return total


def _composition_from_path(graph: ServiceGraph, path: tuple[str, ...]) -> Composition:
    services: list[str] = []
    for vertex_id in path:
        services.extend(graph.vertex(vertex_id).service_ids)
    weights = tuple(graph.weights[(u, v)] for u, v in zip(path, path[1:]))
    return Composition(
        vertex_ids=path,
        service_ids=tuple(services),
        edge_weights=weights,
        cost=path_cost(graph, path),
        alpha=graph.alpha,
    )


def astar_compose(graph: ServiceGraph, trace: SearchTrace | None = None) -> Composition:
    """Find the cheapest feasible composition.

    Ties in cost resolve to the lexicographically smallest vertex-id
    sequence; with an identical graph the result is bit-for-bit reproducible.
    Raises ``InfeasibleCompositionError`` when no path covers every layer.
    """
    floors = layer_floor_costs(graph)

    start_provided: frozenset[str] = frozenset()
    # Heap entries: (f, path, g, vertex, provided). Comparing the path tuple
    # second makes equal-cost expansion order lexicographic.
    h0 = heuristic_from_layer(floors, LAYER_SOURCE)
    heap: list[tuple[float, tuple[str, ...], float, str, frozenset[str]]] = [
        (h0, (SOURCE_VERTEX,), 0.0, SOURCE_VERTEX, start_provided)
    ]
    closed: set[tuple[str, frozenset[str]]] = set()
    deepest = LAYER_SOURCE

    while heap:
        f, path, g, vertex_id, provided = heapq.heappop(heap)
        key = (vertex_id, provided)
        if key in closed:
            continue
        closed.add(key)
        vertex = graph.vertex(vertex_id)
        if vertex.layer > deepest:
            deepest = vertex.layer
        if trace is not None:
            trace.expanded.append((vertex_id, provided, g))
        if vertex_id == SINK_VERTEX:
            return _composition_from_path(graph, path)

        next_provided = provided | vertex.guarantees
        for succ_id in graph.successors[vertex_id]:
            succ = graph.vertex(succ_id)
            if not succ.requirements <= next_provided:
                continue
            succ_key = (succ_id, next_provided)
            if succ_key in closed:
                continue
            succ_g = g + graph.weights[(vertex_id, succ_id)]
            succ_f = succ_g + heuristic_from_layer(floors, succ.layer)
            heapq.heappush(heap, (succ_f, path + (succ_id,), succ_g, succ_id, next_provided))
            if trace is not None:
                trace.pushed += 1

    raise InfeasibleCompositionError(layer=deepest + 1)


def brute_force_compose(graph: ServiceGraph, max_paths: int = 1_000_000) -> Composition:
    """Reference oracle: enumerate every layer combination exhaustively.

    Selects the minimum by (cost, vertex-id sequence), accumulating cost in
    the same order as the A* search so float results agree exactly. Guards
    against combinatorial blowups via ``max_paths``.
    """
    inner_layers = graph.layers[1:-1]
    n_paths = 1
    for layer in inner_layers:
        n_paths *= len(layer)
    if n_paths > max_paths:
        raise ValueError(f"{n_paths} candidate paths exceed the {max_paths} cap")

    best: tuple[float, tuple[str, ...]] | None = None
    deepest = LAYER_SOURCE
    for combo in itertools.product(*inner_layers):
        path = (SOURCE_VERTEX, *combo, SINK_VERTEX)
        provided: frozenset[str] = frozenset()
        cost = 0.0
        feasible = True
        for u, v in zip(path, path[1:]):
            weight = graph.weights.get((u, v))
            vertex = graph.vertex(v)
            if weight is None or not vertex.requirements <= (
                provided | graph.vertex(u).guarantees
            ):
                feasible = False
                depth = graph.vertex(u).layer
                if depth > deepest:
                    deepest = depth
                break
            provided = provided | graph.vertex(u).guarantees
            cost += weight
        if not feasible:
            continue
        candidate = (cost, path)
        if best is None or candidate < best:
            best = candidate

    if best is None:
        raise InfeasibleCompositionError(layer=deepest + 1)
    return _composition_from_path(graph, best[1])


@dataclass(frozen=True)
class CompositionPlan:
    """Role assignment extracted from a composition path."""

    sensor: str
    filter_primary: str
    filter_model: str | None
    controller_primary: str
    controller_model: str | None
    actuator: str

    @staticmethod
    def from_composition(graph: ServiceGraph, composition: Composition) -> "CompositionPlan":
        by_layer = {graph.vertex(vid).layer: graph.vertex(vid) for vid in composition.vertex_ids}
        filter_vertex = by_layer[LAYER_FILTER]
        controller_vertex = by_layer[LAYER_CONTROLLER]
        return CompositionPlan(
            sensor=by_layer[2].service_ids[0],
            filter_primary=filter_vertex.service_ids[0],
            filter_model=filter_vertex.service_ids[1] if len(filter_vertex.service_ids) > 1 else None,
            controller_primary=controller_vertex.service_ids[0],
            controller_model=(
                controller_vertex.service_ids[1] if len(controller_vertex.service_ids) > 1 else None
            ),
            actuator=by_layer[5].service_ids[0],
        )


@dataclass(frozen=True)
class OrchestrationResult:
    """Everything one (re-)composition run produced."""

    alpha: float
    graph: ServiceGraph
    composition: Composition


def orchestrate(
    registry: "Registry", bo_state: "BoState", context: "Context"
) -> OrchestrationResult:
    """Pick the trade-off weight for the context, build the graph, search it."""
    from .tuner import suggest_alpha

    alpha = suggest_alpha(bo_state, context)
    return orchestrate_at(registry, alpha)


def orchestrate_at(registry: "Registry", alpha: float) -> OrchestrationResult:
    """Compose with an explicitly chosen trade-off weight."""
    graph = build_service_graph(registry, alpha)
    composition = astar_compose(graph)
    return OrchestrationResult(alpha=alpha, graph=graph, composition=composition)
