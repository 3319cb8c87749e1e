"""Service registry for closed-loop control components.

The registry is the system's source of truth about which services exist,
which data topics they require and guarantee, and the latest estimates of
their execution time and inaccuracy. Snapshots are immutable: every mutation
returns a new registry plus a change event, so consumers can cache a snapshot
and react to events without locking.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass, replace
from enum import Enum
from typing import Iterable, Iterator, Mapping

TopicId = str

# Well-known topics used by the bundled velocity-control services. Any string
# is a valid topic; these constants just keep scenario files and code aligned.
TOPIC_MEASUREMENT: TopicId = "measurement"
TOPIC_STATE_ESTIMATE: TopicId = "state-estimate"
TOPIC_CONTROL_SIGNAL: TopicId = "control-signal"
TOPIC_ACTUATION: TopicId = "actuation"
TOPIC_MODEL: TopicId = "model"

_ID_PATTERN = re.compile(r"^[a-z0-9][a-z0-9_.-]*$")


class ServiceKind(Enum):
    """Roles a service can play in a control loop."""

    SENSOR = "sensor"
    FILTER = "filter"
    CONTROLLER = "controller"
    ACTUATOR = "actuator"
    MODEL = "model"
    PROCESS = "process"


class RegistryError(Exception):
    """Raised for invalid registry mutations or malformed services."""


@dataclass(frozen=True, slots=True)
class Metrics:
    """Execution-time and inaccuracy estimates for one service.

    ``tau_ms`` is the running mean over all recorded execution-time samples;
    until the first sample arrives (``tau_sample_count == 0``) it holds the
    configured initial estimate. ``epsilon`` is the latest inaccuracy estimate
    in the service's output unit and is replaced, not averaged, on update.
    """

    tau_ms: float
    epsilon: float
    tau_sample_count: int = 0

    def __post_init__(self) -> None:
        if not math.isfinite(self.tau_ms) or self.tau_ms < 0.0:
            raise RegistryError(f"tau_ms must be finite and >= 0, got {self.tau_ms!r}")
        if not math.isfinite(self.epsilon) or self.epsilon < 0.0:
            raise RegistryError(f"epsilon must be finite and >= 0, got {self.epsilon!r}")
        if self.tau_sample_count < 0:
            raise RegistryError("tau_sample_count must be >= 0")

    def fold_time_sample(self, tau_sample_ms: float) -> "Metrics":
        """Fold one execution-time sample into the running mean.

        The configured initial estimate is discarded once real samples exist:
        the mean is taken over samples only.
        """
        if not math.isfinite(tau_sample_ms) or tau_sample_ms < 0.0:
            raise RegistryError(f"tau sample must be finite and >= 0, got {tau_sample_ms!r}")
        n = self.tau_sample_count
        mean = tau_sample_ms if n == 0 else self.tau_ms + (tau_sample_ms - self.tau_ms) / (n + 1)
        return replace(self, tau_ms=mean, tau_sample_count=n + 1)

    def with_epsilon(self, epsilon: float) -> "Metrics":
        if not math.isfinite(epsilon) or epsilon < 0.0:
            raise RegistryError(f"epsilon must be finite and >= 0, got {epsilon!r}")
        return replace(self, epsilon=epsilon)


@dataclass(frozen=True, slots=True)
class Service:
    """One registered control-loop service and its composition contract.

    ``guarantees`` are the topics the service provides to services placed
    after it in a loop; ``requirements`` are the topics it must receive from
    services placed before it. A filter or controller whose requirements
    include the model topic can only run in combination with a model service.
    """

    service_id: str
    kind: ServiceKind
    guarantees: frozenset[TopicId]
    requirements: frozenset[TopicId]
    metrics: Metrics

    def __post_init__(self) -> None:
        if not _ID_PATTERN.match(self.service_id):
            raise RegistryError(
                f"service id {self.service_id!r} must match {_ID_PATTERN.pattern}"
            )
        if not self.guarantees:
            raise RegistryError(f"service {self.service_id!r} must guarantee at least one topic")
        if self.needs_model and self.kind not in (ServiceKind.FILTER, ServiceKind.CONTROLLER):
            raise RegistryError(
                f"service {self.service_id!r}: only filters and controllers may require a model"
            )
        if self.kind is ServiceKind.MODEL and self.requirements:
            raise RegistryError(f"model service {self.service_id!r} must not require topics")

    @property
    def needs_model(self) -> bool:
        return TOPIC_MODEL in self.requirements


class RegistryEventKind(Enum):
    SERVICE_ADDED = "service-added"
    SERVICE_REMOVED = "service-removed"
    METRICS_UPDATED = "metrics-updated"
    PAIR_EPSILON_RECORDED = "pair-epsilon-recorded"


@dataclass(frozen=True, slots=True)
class RegistryEvent:
    """Change notification emitted by every registry mutation."""

    kind: RegistryEventKind
    service_id: str
    model_id: str | None = None


@dataclass(frozen=True)
class Registry:
    """Immutable snapshot of all registered services.

    Mutating operations return ``(new_registry, event)``; the receiver decides
    whether the event warrants re-composing the loop. All listing operations
    return services sorted by id so downstream consumers are deterministic.
    """

    _services: Mapping[str, Service]
    _pair_epsilons: Mapping[tuple[str, str], float]

    @staticmethod
    def empty() -> "Registry":
        return Registry(_services={}, _pair_epsilons={})

    @staticmethod
    def from_services(services: Iterable[Service]) -> "Registry":
        registry = Registry.empty()
        for service in services:
            registry, _ = registry.add(service)
        return registry

    def __len__(self) -> int:
        return len(self._services)

    def __contains__(self, service_id: str) -> bool:
        return service_id in self._services

    def __iter__(self) -> Iterator[Service]:
        return iter(self.services())

    def get(self, service_id: str) -> Service:
        try:
            return self._services[service_id]
        except KeyError:
            raise RegistryError(f"unknown service id {service_id!r}") from None

    def services(self) -> tuple[Service, ...]:
        return tuple(self._services[sid] for sid in sorted(self._services))

    def select_by_kind(self, kind: ServiceKind) -> tuple[Service, ...]:
        return tuple(s for s in self.services() if s.kind is kind)

    def pair_epsilon(self, primary_id: str, model_id: str) -> float | None:
        return self._pair_epsilons.get((primary_id, model_id))

    def pair_epsilons(self) -> Mapping[tuple[str, str], float]:
        return dict(self._pair_epsilons)

    def add(self, service: Service) -> tuple["Registry", RegistryEvent]:
        if service.service_id in self._services:
            raise RegistryError(f"duplicate service id {service.service_id!r}")
        services = dict(self._services)
        services[service.service_id] = service
        event = RegistryEvent(RegistryEventKind.SERVICE_ADDED, service.service_id)
        return Registry(services, self._pair_epsilons), event

    def remove(self, service_id: str) -> tuple["Registry", RegistryEvent]:
        if service_id not in self._services:
            raise RegistryError(f"unknown service id {service_id!r}")
        services = dict(self._services)
        del services[service_id]
        pairs = {
            key: value
            for key, value in self._pair_epsilons.items()
            if service_id not in key
        }
        event = RegistryEvent(RegistryEventKind.SERVICE_REMOVED, service_id)
        return Registry(services, pairs), event

    def update_metrics(
        self,
        service_id: str,
        tau_sample_ms: float | None = None,
        epsilon: float | None = None,
    ) -> tuple["Registry", RegistryEvent]:
        """Fold a time sample into the running mean and/or replace epsilon."""
        service = self.get(service_id)
        metrics = service.metrics
        if tau_sample_ms is not None:
            metrics = metrics.fold_time_sample(tau_sample_ms)
        if epsilon is not None:
            metrics = metrics.with_epsilon(epsilon)
        services = dict(self._services)
        services[service_id] = replace(service, metrics=metrics)
        event = RegistryEvent(RegistryEventKind.METRICS_UPDATED, service_id)
        return Registry(services, self._pair_epsilons), event

    def record_pair_epsilon(
        self, primary_id: str, model_id: str, epsilon: float
    ) -> tuple["Registry", RegistryEvent]:
        """Store a measured end-to-end inaccuracy for a (service, model) pair."""
        primary = self.get(primary_id)
        model = self.get(model_id)
        if model.kind is not ServiceKind.MODEL:
            raise RegistryError(f"{model_id!r} is not a model service")
        if not primary.needs_model:
            raise RegistryError(f"{primary_id!r} does not run with a model")
        if not math.isfinite(epsilon) or epsilon < 0.0:
            raise RegistryError(f"pair epsilon must be finite and >= 0, got {epsilon!r}")
        pairs = dict(self._pair_epsilons)
        pairs[(primary_id, model_id)] = epsilon
        event = RegistryEvent(
            RegistryEventKind.PAIR_EPSILON_RECORDED, primary_id, model_id=model_id
        )
        return Registry(self._services, pairs), event
