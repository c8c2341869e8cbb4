"""Windowed Service Level Expectation compliance per layer and entity.

Compliance is the percentage of evaluated ticks inside a monitoring window
at which every constituent metric sits within its bounds. The tick grid is
the union of constituent sample timestamps snapped to a one-second grid,
with last-value-carried-forward inside the window; constituents with no
value yet at a tick are skipped rather than counted as breaching, since
sources sample at different rates.

Windows that evaluated zero ticks are flagged no-data and are never counted
as compliant by any aggregate.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

from .errors import ConfigError
from .model import EntityId, Layer, MetricSample, TelemetrySnapshot

TICK_US = 1_000_000  # metric sources align to a one-second grid

DEFAULT_WINDOW_US = 300_000_000  # 5 minutes
DEFAULT_STRIDE_US = 60_000_000  # 1 minute


@dataclass(frozen=True)
class SleBound:
    metric: str
    lower: float | None = None
    upper: float | None = None

    def __post_init__(self):
        if self.lower is None and self.upper is None:
            raise ConfigError(f"constituent {self.metric!r} needs at least one bound")

    def in_bounds(self, value: float) -> bool:
        if self.lower is not None and value < self.lower:
            return False
        if self.upper is not None and value > self.upper:
            return False
        return True


@dataclass(frozen=True)
class SleProfile:
    layer: Layer
    constituents: tuple[SleBound, ...]
    window_us: int = DEFAULT_WINDOW_US
    stride_us: int = DEFAULT_STRIDE_US

    def __post_init__(self):
        if not self.constituents:
            raise ConfigError("profile needs at least one constituent metric")
        if self.stride_us <= 0 or self.window_us < self.stride_us:
            raise ConfigError("need window_length >= stride > 0")


@dataclass(frozen=True)
class SleWindow:
    layer: Layer
    entity: EntityId | None
    window_start: int
    window_us: int
    compliance_pct: float | None  # None exactly when no data was evaluated
    evaluated_timestamps: int
    breaching_metrics: tuple[tuple[str, int], ...] = ()

    @property
    def no_data(self) -> bool:
        return self.compliance_pct is None

    def to_doc(self) -> dict:
        return {
            "layer": self.layer.value,
            "entity": str(self.entity) if self.entity else None,
            "window_start": self.window_start,
            "window_us": self.window_us,
            "compliance_pct": self.compliance_pct,
            "no_data": self.no_data,
            "evaluated_timestamps": self.evaluated_timestamps,
            "breaching_metrics": [list(b) for b in self.breaching_metrics],
        }


def default_profiles() -> dict[Layer, SleProfile]:
    """Artifact default profiles; every number is config-overridable."""
    return {
        Layer.GPU: SleProfile(
            layer=Layer.GPU,
            constituents=(
                SleBound("gpu.utilization", lower=5.0, upper=98.0),
                SleBound("gpu.temperature", upper=85.0),
                SleBound("gpu.memory_used_pct", upper=95.0),
            ),
        ),
        Layer.APPLICATION: SleProfile(
            layer=Layer.APPLICATION,
            constituents=(SleBound("app.iteration_rate", lower=5.0),),
        ),
        Layer.NIC: SleProfile(
            layer=Layer.NIC,
            constituents=(
                SleBound("nic.cnp_received.rate", upper=50.0),
                SleBound("nic.retransmits.rate", upper=50.0),
                SleBound("nic.out_of_sequence.rate", upper=50.0),
            ),
        ),
        Layer.SWITCH_PORT: SleProfile(
            layer=Layer.SWITCH_PORT,
            constituents=(SleBound("switch.queue_depth", upper=5000.0),),
        ),
    }


def evaluate_window(
    samples: Mapping[str, Sequence[MetricSample]],
    profile: SleProfile,
    window_start: int,
    entity: EntityId | None = None,
) -> SleWindow:
    """Score one window; `samples` maps constituent metric to ordered samples.

    Samples outside [window_start, window_start + window) are ignored, so
    callers may pass whole series.
    """
    window_end = window_start + profile.window_us
    per_metric: dict[str, list[MetricSample]] = {}
    ticks: set[int] = set()
    for bound in profile.constituents:
        inside = [
            s
            for s in samples.get(bound.metric, ())
            if window_start <= s.timestamp < window_end
        ]
        per_metric[bound.metric] = inside
        for s in inside:
            ticks.add((s.timestamp - window_start) // TICK_US)

    if not ticks:
        return SleWindow(
            layer=profile.layer,
            entity=entity,
            window_start=window_start,
            window_us=profile.window_us,
            compliance_pct=None,
            evaluated_timestamps=0,
        )

    ordered_ticks = sorted(ticks)
    compliant = 0
    breaches: dict[str, int] = {}
    cursors = {m: 0 for m in per_metric}
    latest: dict[str, float | None] = {m: None for m in per_metric}
    for tick in ordered_ticks:
        tick_end = window_start + (tick + 1) * TICK_US
        ok = True
        for bound in profile.constituents:
            series = per_metric[bound.metric]
            i = cursors[bound.metric]
            while i < len(series) and series[i].timestamp < tick_end:
                latest[bound.metric] = series[i].value
                i += 1
            cursors[bound.metric] = i
            value = latest[bound.metric]
            if value is None:
                continue  # constituent has no reading yet at this tick
            if not bound.in_bounds(value):
                ok = False
                breaches[bound.metric] = breaches.get(bound.metric, 0) + 1
        if ok:
            compliant += 1

    return SleWindow(
        layer=profile.layer,
        entity=entity,
        window_start=window_start,
        window_us=profile.window_us,
        compliance_pct=compliant / len(ordered_ticks) * 100.0,
        evaluated_timestamps=len(ordered_ticks),
        breaching_metrics=tuple(sorted(breaches.items())),
    )


def sle_series(
    snapshot: TelemetrySnapshot,
    entity: EntityId,
    profile: SleProfile,
) -> list[SleWindow]:
    """Windows advancing by stride across the snapshot time range."""
    if snapshot.time_range is None:
        return []
    t_min, t_max = snapshot.time_range
    wanted = {b.metric for b in profile.constituents}
    samples: dict[str, list[MetricSample]] = {m: [] for m in wanted}
    for s in snapshot.by_entity.get(entity, ()):
        if s.metric in wanted:
            samples[s.metric].append(s)

    windows = []
    start = t_min
    while start <= t_max:
        windows.append(evaluate_window(samples, profile, start, entity))
        start += profile.stride_us
    return windows


def layer_sle(
    graph,
    snapshot: TelemetrySnapshot,
    app: EntityId,
    layer: Layer,
    profile: SleProfile,
) -> list[SleWindow]:
    """Aggregate SLE across the app's entities in a layer: weakest link.

    Each aggregated window carries the entity that bound the minimum. A
    window is no-data only when every entity had no data for it.
    """
    from .depgraph import app_entities

    entities = sorted(app_entities(graph, app, layer), key=EntityId.sort_key)
    if not entities:
        if snapshot.time_range is None:
            return []
        t_min, t_max = snapshot.time_range
        out = []
        start = t_min
        while start <= t_max:
            out.append(
                SleWindow(
                    layer=layer,
                    entity=None,
                    window_start=start,
                    window_us=profile.window_us,
                    compliance_pct=None,
                    evaluated_timestamps=0,
                )
            )
            start += profile.stride_us
        return out

    per_entity = [sle_series(snapshot, entity, profile) for entity in entities]
    aggregated: list[SleWindow] = []
    for idx in range(len(per_entity[0])):
        best: SleWindow | None = None
        ticks = 0
        for series in per_entity:
            win = series[idx]
            ticks += win.evaluated_timestamps
            if win.no_data:
                continue
            if best is None or win.compliance_pct < best.compliance_pct:
                best = win
        if best is None:
            template = per_entity[0][idx]
            aggregated.append(
                SleWindow(
                    layer=layer,
                    entity=None,
                    window_start=template.window_start,
                    window_us=template.window_us,
                    compliance_pct=None,
                    evaluated_timestamps=0,
                )
            )
        else:
            aggregated.append(
                SleWindow(
                    layer=layer,
                    entity=best.entity,
                    window_start=best.window_start,
                    window_us=best.window_us,
                    compliance_pct=best.compliance_pct,
                    evaluated_timestamps=ticks,
                    breaching_metrics=best.breaching_metrics,
                )
            )
    return aggregated
