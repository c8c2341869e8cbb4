"""Cross-layer assurance engine for distributed ML workloads."""

from .model import (
    CollectiveLogRecord,
    EntityId,
    FlowRecord,
    Layer,
    MetricSample,
    NicCounterRecord,
    TelemetrySnapshot,
    Topology,
    validate_topology,
)

__version__ = "0.1.0"

__all__ = [
    "CollectiveLogRecord",
    "EntityId",
    "FlowRecord",
    "Layer",
    "MetricSample",
    "NicCounterRecord",
    "TelemetrySnapshot",
    "Topology",
    "validate_topology",
    "__version__",
]
