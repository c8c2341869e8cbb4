"""Robust anomaly detection over metric series and ranking for RCA.

Scores are robust z-scores: distance from the trailing-window median in
units of scaled MAD. Telemetry is spiky, so median/MAD beats mean/stddev
for a baseline. An excursion must persist for `persistence` consecutive
samples to become an event, and each excursion run yields exactly one
event, keeping RCA input compact.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import median
from typing import Iterable, Sequence

from .errors import TooShortSeriesError
from .model import EntityId, MetricSample, TelemetrySnapshot

MAD_SCALE = 1.4826  # makes MAD comparable to a standard deviation
MIN_BASELINE = 4

DEFAULT_BASELINE_WINDOW = 120
DEFAULT_THRESHOLD = 3.0
DEFAULT_PERSISTENCE = 3


@dataclass(frozen=True)
class DetectorParams:
    baseline_window: int = DEFAULT_BASELINE_WINDOW
    threshold: float = DEFAULT_THRESHOLD
    persistence: int = DEFAULT_PERSISTENCE
    # MAD over very few samples is unstable; don't score until this much
    # history has accumulated.
    min_history: int = 12

    def __post_init__(self):
        if self.threshold <= 0:
            raise ValueError("threshold must be positive")
        if self.persistence < 1:
            raise ValueError("persistence must be >= 1")
        if self.baseline_window < MIN_BASELINE:
            raise ValueError(f"baseline_window must be >= {MIN_BASELINE}")
        if not MIN_BASELINE <= self.min_history <= self.baseline_window:
            raise ValueError(
                f"min_history must be within [{MIN_BASELINE}, baseline_window]"
            )


@dataclass(frozen=True)
class AnomalyEvent:
    entity: EntityId
    metric: str
    timestamp: int  # first sample of the excursion run
    score: float  # maximum robust z-score over the run
    direction: str  # "high" or "low"
    baseline_median: float
    baseline_dispersion: float
    window: tuple[int, int]  # (first, last) sample timestamps of the run

    def to_doc(self) -> dict:
        return {
            "entity": str(self.entity),
            "metric": self.metric,
            "timestamp": self.timestamp,
            "score": self.score,
            "direction": self.direction,
            "baseline": {"median": self.baseline_median, "dispersion": self.baseline_dispersion},
            "window": list(self.window),
        }


def robust_baseline(series: Sequence[float]) -> tuple[float, float]:
    """(median, scaled MAD) of a series; MAD of zero falls back to
    max(1e-9, 1% of |median|) so quantized metrics never divide by zero."""
    if len(series) < MIN_BASELINE:
        raise TooShortSeriesError(f"need >= {MIN_BASELINE} values, got {len(series)}")
    mid = median(series)
    mad = median(abs(v - mid) for v in series)
    dispersion = mad * MAD_SCALE
    if dispersion == 0.0:
        dispersion = max(1e-9, 0.01 * abs(mid))
    return mid, dispersion


def detect(samples: Sequence[MetricSample], params: DetectorParams | None = None) -> list[AnomalyEvent]:
    """Emit one event per qualifying excursion run in one (entity, metric) series.

    The score of sample i uses the trailing `baseline_window` samples
    excluding i itself; samples without enough history score zero.
    """
    params = params or DetectorParams()
    n = len(samples)
    if n <= params.min_history:
        return []
    entity = samples[0].entity
    metric = samples[0].metric
    values = [s.value for s in samples]
    if min(values) == max(values):
        return []  # constant series scores zero everywhere

    events: list[AnomalyEvent] = []
    run_start: int | None = None
    run_end = -1
    run_score = 0.0
    run_direction = "high"
    run_baseline = (0.0, 0.0)

    def flush():
        nonlocal run_start
        if run_start is not None and (run_end - run_start + 1) >= params.persistence:
            events.append(
                AnomalyEvent(
                    entity=entity,
                    metric=metric,
                    timestamp=samples[run_start].timestamp,
                    score=run_score,
                    direction=run_direction,
                    baseline_median=run_baseline[0],
                    baseline_dispersion=run_baseline[1],
                    window=(samples[run_start].timestamp, samples[run_end].timestamp),
                )
            )
        run_start = None

    for i in range(n):
        lo = max(0, i - params.baseline_window)
        baseline = values[lo:i]
        if len(baseline) < params.min_history:
            flush()
            continue
        mid, dispersion = robust_baseline(baseline)
        score = abs(values[i] - mid) / dispersion
        if score >= params.threshold:
            direction = "high" if values[i] > mid else "low"
            if run_start is not None and direction != run_direction:
                flush()  # a direction change ends the excursion run
            if run_start is None:
                run_start = i
                run_score = score
                run_direction = direction
                run_baseline = (mid, dispersion)
            else:
                run_score = max(run_score, score)
            run_end = i
        else:
            flush()
    flush()
    return events


def detect_all(
    snapshot: TelemetrySnapshot,
    params: DetectorParams | None = None,
    entities: Iterable[EntityId] | None = None,
) -> list[AnomalyEvent]:
    """Run the detector over every (entity, metric) series in the snapshot."""
    params = params or DetectorParams()
    wanted = None if entities is None else set(entities)
    events: list[AnomalyEvent] = []
    for entity in sorted(snapshot.by_entity, key=EntityId.sort_key):
        if wanted is not None and entity not in wanted:
            continue
        by_metric: dict[str, list[MetricSample]] = {}
        for sample in snapshot.by_entity[entity]:
            by_metric.setdefault(sample.metric, []).append(sample)
        for metric in sorted(by_metric):
            events.extend(detect(by_metric[metric], params))
    return events


def rank_metrics(
    events: Sequence[AnomalyEvent],
    time_range: tuple[int, int] | None = None,
) -> list[tuple[EntityId, str, float]]:
    """Rank (entity, metric) pairs by their maximum event score in range.

    Descending by score; ties break lexicographically by (layer name,
    entity key, metric) so output is deterministic.
    """
    best: dict[tuple[EntityId, str], float] = {}
    for event in events:
        if time_range is not None and not (time_range[0] <= event.timestamp <= time_range[1]):
            continue
        key = (event.entity, event.metric)
        best[key] = max(best.get(key, 0.0), event.score)
    ranked = [(entity, metric, score) for (entity, metric), score in best.items()]
    ranked.sort(key=lambda row: (-row[2], row[0].lex_key(), row[1]))
    return ranked
