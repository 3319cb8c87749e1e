"""loopsmith: compose and tune closed control loops from registered services.

A registry tracks control-loop services (sensors, filters, controllers,
actuators, models) with execution-time and inaccuracy estimates. A layered
weighted graph prices every deployable combination, A* extracts the cheapest
feasible loop for a given time/accuracy trade-off weight, and a contextual
Bayesian tuner learns that weight from measured episodes of a longitudinal
vehicle simulation.
"""

from .graph import (
    GraphConstructionError,
    ServiceGraph,
    build_service_graph,
    combined_vertex_metrics,
    edge_weight,
    reweight,
)
from .registry import (
    Metrics,
    Registry,
    RegistryError,
    RegistryEvent,
    RegistryEventKind,
    Service,
    ServiceKind,
)
from .scenario import Scenario, ScenarioError, build_registry, bundled_scenario_path, load_scenario
from .search import (
    Composition,
    CompositionPlan,
    InfeasibleCompositionError,
    OrchestrationResult,
    astar_compose,
    brute_force_compose,
    orchestrate,
    orchestrate_at,
)
from .tuner import (
    BoState,
    Context,
    Criterion,
    Observation,
    TunerConfig,
    evaluate_criterion,
    gp_posterior,
    make_tuner,
    observe,
    suggest_alpha,
    with_criterion,
)
from .harness import run_learning_loop, sweep_alpha, write_reports

__version__ = "0.1.0"

__all__ = [
    "GraphConstructionError",
    "ServiceGraph",
    "build_service_graph",
    "combined_vertex_metrics",
    "edge_weight",
    "reweight",
    "Metrics",
    "Registry",
    "RegistryError",
    "RegistryEvent",
    "RegistryEventKind",
    "Service",
    "ServiceKind",
    "Scenario",
    "ScenarioError",
    "build_registry",
    "bundled_scenario_path",
    "load_scenario",
    "Composition",
    "CompositionPlan",
    "InfeasibleCompositionError",
    "OrchestrationResult",
    "astar_compose",
    "brute_force_compose",
    "orchestrate",
    "orchestrate_at",
    "BoState",
    "Context",
    "Criterion",
    "Observation",
    "TunerConfig",
    "evaluate_criterion",
    "gp_posterior",
    "make_tuner",
    "observe",
    "suggest_alpha",
    "with_criterion",
    "run_learning_loop",
    "sweep_alpha",
    "write_reports",
    "__version__",
]
