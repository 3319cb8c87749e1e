"""Registry behavior: immutable snapshots, metric folding, pair records."""

from __future__ import annotations

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from loopsmith.registry import (
    Metrics,
    Registry,
    RegistryError,
    RegistryEventKind,
    Service,
    ServiceKind,
    TOPIC_MEASUREMENT,
    TOPIC_MODEL,
    TOPIC_STATE_ESTIMATE,
)


def _sensor(service_id: str = "sensor_a", tau_ms: float = 2.0) -> Service:
    return Service(
        service_id=service_id,
        kind=ServiceKind.SENSOR,
        guarantees=frozenset({TOPIC_MEASUREMENT}),
        requirements=frozenset(),
        metrics=Metrics(tau_ms=tau_ms, epsilon=0.05),
    )


def _model(service_id: str = "model_a") -> Service:
    return Service(
        service_id=service_id,
        kind=ServiceKind.MODEL,
        guarantees=frozenset({TOPIC_MODEL}),
        requirements=frozenset(),
        metrics=Metrics(tau_ms=1.0, epsilon=0.3),
    )


def _filter(service_id: str = "filter_a", needs_model: bool = True) -> Service:
    requires = {TOPIC_MEASUREMENT}
    if needs_model:
        requires.add(TOPIC_MODEL)
    return Service(
        service_id=service_id,
        kind=ServiceKind.FILTER,
        guarantees=frozenset({TOPIC_STATE_ESTIMATE}),
        requirements=frozenset(requires),
        metrics=Metrics(tau_ms=1.0, epsilon=0.04),
    )


def test_add_service_returns_new_registry_with_event():
    empty = Registry.empty()
    registry, event = empty.add(_sensor())
    assert len(empty) == 0
    assert len(registry) == 1
    assert "sensor_a" in registry
    assert event.kind is RegistryEventKind.SERVICE_ADDED
    assert event.service_id == "sensor_a"


def test_add_duplicate_id_raises():
    registry, _ = Registry.empty().add(_sensor())
    with pytest.raises(RegistryError):
        registry.add(_sensor())


def test_remove_returns_new_registry():
    registry, _ = Registry.empty().add(_sensor())
    smaller, event = registry.remove("sensor_a")
    assert "sensor_a" in registry
    assert "sensor_a" not in smaller
    assert event.kind is RegistryEventKind.SERVICE_REMOVED
    with pytest.raises(RegistryError):
        registry.remove("nope")


def test_get_unknown_service_raises():
    with pytest.raises(RegistryError):
        Registry.empty().get("ghost")


def test_services_listing_is_id_sorted():
    registry = Registry.from_services(
        [_sensor("zeta"), _sensor("alpha"), _sensor("mid")]
    )
    assert [s.service_id for s in registry.services()] == ["alpha", "mid", "zeta"]


def test_select_by_kind(bundled_registry):
    controllers = bundled_registry.select_by_kind(ServiceKind.CONTROLLER)
    assert [s.service_id for s in controllers] == ["mpc", "pid"]
    models = bundled_registry.select_by_kind(ServiceKind.MODEL)
    assert len(models) == 3
    assert Registry.empty().select_by_kind(ServiceKind.SENSOR) == ()


def test_fold_time_sample_running_mean():
    # First sample replaces the configured prior outright.
    metrics = Metrics(tau_ms=5.0, epsilon=0.1)
    folded = metrics.fold_time_sample(5.0)
    assert folded.tau_ms == 5.0
    assert folded.tau_sample_count == 1

    one = Metrics(tau_ms=10.0, epsilon=0.1, tau_sample_count=1)
    assert one.fold_time_sample(20.0).tau_ms == pytest.approx(15.0)

    running = Metrics(tau_ms=999.0, epsilon=0.1)
    for sample in (10.0, 20.0, 30.0):
        running = running.fold_time_sample(sample)
    assert running.tau_ms == pytest.approx(20.0)
    assert running.tau_sample_count == 3


def test_epsilon_update_replaces_rather_than_averages():
    metrics = Metrics(tau_ms=1.0, epsilon=0.5)
    assert metrics.with_epsilon(0.1).epsilon == 0.1
    assert metrics.with_epsilon(0.9).epsilon == 0.9


def test_update_metrics_folds_time_and_replaces_epsilon():
    registry, _ = Registry.empty().add(_sensor(tau_ms=4.0))
    updated, event = registry.update_metrics(
        "sensor_a", tau_sample_ms=8.0, epsilon=0.2
    )
    assert event.kind is RegistryEventKind.METRICS_UPDATED
    metrics = updated.get("sensor_a").metrics
    assert metrics.tau_ms == 8.0
    assert metrics.tau_sample_count == 1
    assert metrics.epsilon == 0.2
    # Original snapshot is untouched.
    assert registry.get("sensor_a").metrics.tau_ms == 4.0


def test_service_validation_rejects_bad_inputs():
    with pytest.raises(RegistryError):
        _sensor("Uppercase")
    with pytest.raises(RegistryError):
        Service(
            service_id="no_outputs",
            kind=ServiceKind.SENSOR,
            guarantees=frozenset(),
            requirements=frozenset(),
            metrics=Metrics(tau_ms=1.0, epsilon=0.0),
        )
    with pytest.raises(RegistryError):
        Service(
            service_id="model_needs",
            kind=ServiceKind.MODEL,
            guarantees=frozenset({TOPIC_MODEL}),
            requirements=frozenset({TOPIC_MEASUREMENT}),
            metrics=Metrics(tau_ms=1.0, epsilon=0.0),
        )
    with pytest.raises(RegistryError):
        Service(
            service_id="sensor_model",
            kind=ServiceKind.SENSOR,
            guarantees=frozenset({TOPIC_MEASUREMENT}),
            requirements=frozenset({TOPIC_MODEL}),
            metrics=Metrics(tau_ms=1.0, epsilon=0.0),
        )
    with pytest.raises(RegistryError):
        Metrics(tau_ms=-1.0, epsilon=0.0)
    with pytest.raises(RegistryError):
        Metrics(tau_ms=1.0, epsilon=float("nan"))


def test_needs_model_property():
    assert _filter(needs_model=True).needs_model
    assert not _filter("plain", needs_model=False).needs_model


def test_pair_epsilon_roundtrip():
    registry = Registry.from_services([_filter(), _model()])
    updated, event = registry.record_pair_epsilon("filter_a", "model_a", 0.25)
    assert event.kind is RegistryEventKind.PAIR_EPSILON_RECORDED
    assert updated.pair_epsilon("filter_a", "model_a") == 0.25
    assert registry.pair_epsilon("filter_a", "model_a") is None
    assert ("filter_a", "model_a") in updated.pair_epsilons()


def test_pair_epsilon_validation():
    registry = Registry.from_services([_filter(), _model(), _sensor()])
    with pytest.raises(RegistryError):
        registry.record_pair_epsilon("filter_a", "sensor_a", 0.1)
    with pytest.raises(RegistryError):
        registry.record_pair_epsilon("sensor_a", "model_a", 0.1)
    with pytest.raises(RegistryError):
        registry.record_pair_epsilon("filter_a", "model_a", -0.1)
    with pytest.raises(RegistryError):
        registry.record_pair_epsilon("filter_a", "model_a", float("inf"))


def test_remove_service_clears_its_pair_records():
    registry = Registry.from_services([_filter(), _model()])
    registry, _ = registry.record_pair_epsilon("filter_a", "model_a", 0.25)
    without_model, _ = registry.remove("model_a")
    assert without_model.pair_epsilon("filter_a", "model_a") is None
    without_filter, _ = registry.remove("filter_a")
    assert without_filter.pair_epsilon("filter_a", "model_a") is None


@given(
    st.lists(
        st.floats(min_value=0.0, max_value=1e4, allow_nan=False),
        min_size=1,
        max_size=30,
    )
)
def test_folded_time_matches_sample_mean(samples):
    metrics = Metrics(tau_ms=123.0, epsilon=0.0)
    for sample in samples:
        metrics = metrics.fold_time_sample(sample)
    assert metrics.tau_sample_count == len(samples)
    assert metrics.tau_ms == pytest.approx(float(np.mean(samples)), rel=1e-9, abs=1e-12)
