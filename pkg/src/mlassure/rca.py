"""Root cause analysis: localize application-layer symptoms to a cause.

Application-layer anomalies are symptoms. Candidate causes are anomalies on
entities the app depends on (its GPUs, hosts, NICs) plus fabric elements on
its traced paths. A fixed signature table maps anomalies to cause kinds, so
the ranking is deterministic and testable; the pluggable explanation client
only narrates the already-computed ranking and never selects causes.
"""

from __future__ import annotations

import json
import logging
import urllib.error
import urllib.request
from dataclasses import dataclass
from enum import Enum
from typing import Protocol, Sequence

from .anomaly import AnomalyEvent, DetectorParams, detect_all
from .depgraph import DependencyGraph, app_entities
from .errors import NoSymptomsError, UnknownAppError
from .model import EntityId, Layer, TelemetrySnapshot
from .pathtrace import traced_entities

logger = logging.getLogger(__name__)


class CauseKind(Enum):
    NETWORK_CONGESTION = "network_congestion"
    PACKET_LOSS = "packet_loss"
    GPU_SATURATION = "gpu_saturation"
    GPU_THERMAL_THROTTLE = "gpu_thermal_throttle"
    NIC_FAULT = "nic_fault"
    UNKNOWN = "unknown"


# Single-metric signatures: (metric, direction) -> cause kind. The thermal
# throttle composite (temperature high AND utilization low on one GPU) is
# handled separately in localize().
SIGNATURE_TABLE: dict[tuple[str, str], CauseKind] = {
    ("switch.queue_depth", "high"): CauseKind.NETWORK_CONGESTION,
    ("nic.cnp_received.rate", "high"): CauseKind.NETWORK_CONGESTION,
    ("nic.cnp_sent.rate", "high"): CauseKind.NETWORK_CONGESTION,
    ("nic.ecn_marked.rate", "high"): CauseKind.NETWORK_CONGESTION,
    ("nic.out_of_sequence.rate", "high"): CauseKind.PACKET_LOSS,
    ("nic.retransmits.rate", "high"): CauseKind.PACKET_LOSS,
    ("nic.pause_frames.rate", "high"): CauseKind.NIC_FAULT,
    ("gpu.utilization", "high"): CauseKind.GPU_SATURATION,
}

# Deeper layers win ties: network faults surface as upstream symptoms.
DEFAULT_LAYER_WEIGHTS: dict[Layer, float] = {
    Layer.SWITCH: 1.0,
    Layer.SWITCH_PORT: 1.0,
    Layer.NIC: 0.9,
    Layer.GPU: 0.9,
    Layer.HOST: 0.8,
    Layer.APPLICATION: 0.5,
}

# Preferred layer for locating each cause kind; the pinpointing evidence
# lives there (a congested queue names the port, not the NICs seeing CNPs).
LOCATOR_LAYER: dict[CauseKind, tuple[Layer, ...]] = {
    CauseKind.NETWORK_CONGESTION: (Layer.SWITCH_PORT, Layer.SWITCH, Layer.NIC),
    CauseKind.PACKET_LOSS: (Layer.NIC,),
    CauseKind.NIC_FAULT: (Layer.NIC,),
    CauseKind.GPU_SATURATION: (Layer.GPU,),
    CauseKind.GPU_THERMAL_THROTTLE: (Layer.GPU,),
}

REMEDIATION_STEPS: dict[CauseKind, tuple[str, ...]] = {
    CauseKind.NETWORK_CONGESTION: (
        "review ECMP load balancing across spine uplinks and rebalance flows",
        "verify ECN/CNP thresholds on the congested port and its peers",
        "consider rate-limiting or rescheduling competing workloads sharing the path",
    ),
    CauseKind.PACKET_LOSS: (
        "inspect the NIC and its attached switch port for CRC/physical errors",
        "check MTU and PFC configuration along the path",
        "drain and re-test the link if loss persists",
    ),
    CauseKind.GPU_SATURATION: (
        "optimize workload distribution",
        "rebalance ranks across less-utilized GPUs",
        "profile kernels for hotspots and tune batch sizing",
    ),
    CauseKind.GPU_THERMAL_THROTTLE: (
        "inspect cooling (airflow, fan state) for the affected host",
        "reduce sustained load on the throttling GPU",
        "optimize workload distribution",
    ),
    CauseKind.NIC_FAULT: (
        "check NIC firmware and driver health counters",
        "fail over traffic to a healthy NIC if available",
        "schedule hardware diagnostics for the NIC",
    ),
    CauseKind.UNKNOWN: (
        "review recent configuration changes across all layers",
        "widen the anomaly-detection window and re-run the analysis",
        "inspect raw telemetry around the symptom window",
    ),
}


@dataclass(frozen=True)
class Evidence:
    entity: EntityId
    metric: str
    score: float
    direction: str

    def to_doc(self) -> dict:
        return {
            "entity": str(self.entity),
            "metric": self.metric,
            "score": round(self.score, 4),
            "direction": self.direction,
        }


@dataclass(frozen=True)
class RankedCause:
    cause_kind: CauseKind
    located_at: EntityId
    score: float
    evidence: tuple[Evidence, ...]
    remediation: tuple[str, ...]

    def to_doc(self) -> dict:
        return {
            "cause_kind": self.cause_kind.value,
            "located_at": str(self.located_at),
            "score": round(self.score, 4),
            "evidence": [e.to_doc() for e in self.evidence],
            "remediation": list(self.remediation),
        }


@dataclass
class RcaReport:
    app_id: str
    symptom_window: tuple[int, int]
    symptoms: list[Evidence]
    ranked_causes: list[RankedCause]
    narrative: str = ""
    narrative_source: str = "template"
    explanation_fallback: bool = False

    def to_doc(self) -> dict:
        return {
            "app": self.app_id,
            "symptom_window": list(self.symptom_window),
            "symptoms": [s.to_doc() for s in self.symptoms],
            "ranked_causes": [c.to_doc() for c in self.ranked_causes],
            "narrative": self.narrative,
            "narrative_source": self.narrative_source,
            "explanation_fallback": self.explanation_fallback,
        }

    def to_text(self) -> str:
        return json.dumps(self.to_doc(), indent=2, sort_keys=True) + "\n"


def collect_symptoms(
    graph: DependencyGraph,
    snapshot: TelemetrySnapshot,
    app_id: str,
    time_range: tuple[int, int],
    params: DetectorParams | None = None,
) -> list[Evidence]:
    """Application-layer anomaly events for the app inside the window."""
    app_ent = EntityId.app(app_id)
    if app_ent not in graph.node_set():
        raise UnknownAppError(app_id)
    events = detect_all(snapshot, params, entities=[app_ent])
    symptoms = [
        Evidence(e.entity, e.metric, e.score, e.direction)
        for e in events
        if time_range[0] <= e.timestamp <= time_range[1]
    ]
    symptoms.sort(key=lambda s: (-s.score, s.entity.lex_key(), s.metric))
    return symptoms


def _reachable_entities(
    graph: DependencyGraph, snapshot: TelemetrySnapshot, app_id: str
) -> set[EntityId]:
    app_ent = EntityId.app(app_id)
    reachable: set[EntityId] = set()
    for layer in (Layer.GPU, Layer.HOST, Layer.NIC):
        reachable.update(app_entities(graph, app_ent, layer))
    reachable.update(traced_entities(graph, snapshot, app_id))
    return reachable


def localize(
    graph: DependencyGraph,
    anomalies: Sequence[AnomalyEvent],
    symptoms: Sequence[Evidence],
    app_id: str,
    reachable: set[EntityId],
    layer_weights: dict[Layer, float] | None = None,
    signatures: dict[tuple[str, str], CauseKind] | None = None,
) -> list[RankedCause]:
    """Group reachable anomalies into causes via the signature table.

    Cause score is the maximum evidence score times the layer-depth weight
    of the located entity. Causes sort by score descending with the
    lexicographic (layer, key) tie-break. `signatures` entries override the
    built-in table per (metric, direction) pair.
    """
    if not symptoms:
        raise NoSymptomsError(f"no application-layer symptoms for {app_id!r}")
    weights = layer_weights or DEFAULT_LAYER_WEIGHTS
    table = SIGNATURE_TABLE if not signatures else {**SIGNATURE_TABLE, **signatures}

    in_scope = [a for a in anomalies if a.entity in reachable]
    by_kind: dict[CauseKind, list[AnomalyEvent]] = {}
    leftovers: list[AnomalyEvent] = []

    # Composite rule first: thermal throttle requires both temperature-high
    # and utilization-low on the same GPU.
    temp_high = {
        a.entity for a in in_scope if a.metric == "gpu.temperature" and a.direction == "high"
    }
    util_low = {
        a.entity for a in in_scope if a.metric == "gpu.utilization" and a.direction == "low"
    }
    throttled = temp_high & util_low

    for event in in_scope:
        if event.entity in throttled and (
            (event.metric == "gpu.temperature" and event.direction == "high")
            or (event.metric == "gpu.utilization" and event.direction == "low")
        ):
            by_kind.setdefault(CauseKind.GPU_THERMAL_THROTTLE, []).append(event)
            continue
        kind = table.get((event.metric, event.direction))
        if kind is None:
            leftovers.append(event)
        else:
            by_kind.setdefault(kind, []).append(event)

    causes: list[RankedCause] = []
    for kind, events in by_kind.items():
        located = _locate(kind, events)
        max_score = max(e.score for e in events)
        weight = weights.get(located.layer, 0.5)
        evidence = tuple(
            Evidence(e.entity, e.metric, e.score, e.direction)
            for e in sorted(events, key=lambda e: (-e.score, e.entity.lex_key(), e.metric))
        )
        causes.append(
            RankedCause(
                cause_kind=kind,
                located_at=located,
                score=max_score * weight,
                evidence=evidence,
                remediation=REMEDIATION_STEPS[kind],
            )
        )

    if not causes and leftovers:
        # Reachable anomalies matched no signature: surface the strongest
        # as an unknown cause rather than dropping it.
        top = min(leftovers, key=lambda e: (-e.score, e.entity.lex_key(), e.metric))
        causes.append(
            RankedCause(
                cause_kind=CauseKind.UNKNOWN,
                located_at=top.entity,
                score=top.score * weights.get(top.entity.layer, 0.5),
                evidence=(Evidence(top.entity, top.metric, top.score, top.direction),),
                remediation=REMEDIATION_STEPS[CauseKind.UNKNOWN],
            )
        )

    if not causes:
        causes.append(
            RankedCause(
                cause_kind=CauseKind.UNKNOWN,
                located_at=EntityId.app(app_id),
                score=0.0,
                evidence=(),
                remediation=REMEDIATION_STEPS[CauseKind.UNKNOWN],
            )
        )

    causes.sort(key=lambda c: (-c.score, c.located_at.lex_key(), c.cause_kind.value))
    return causes


def _locate(kind: CauseKind, events: list[AnomalyEvent]) -> EntityId:
    """Pick the entity a cause points at: preferred layer first, then score."""
    preference = LOCATOR_LAYER.get(kind, ())
    for layer in preference:
        candidates = [e for e in events if e.entity.layer is layer]
        if candidates:
            best = min(candidates, key=lambda e: (-e.score, e.entity.lex_key()))
            return best.entity
    best = min(events, key=lambda e: (-e.score, e.entity.lex_key()))
    return best.entity


def remediation_for(cause_kind: CauseKind) -> tuple[str, ...]:
    return REMEDIATION_STEPS[cause_kind]


# ---------------------------------------------------------------------------
# Explanation clients
# ---------------------------------------------------------------------------


class ExplanationClient(Protocol):
    name: str

    def explain(
        self,
        symptoms: Sequence[Evidence],
        ranked_causes: Sequence[RankedCause],
    ) -> str: ...


class TemplateExplanationClient:
    """Deterministic narrative: top cause, its location, top-3 evidence."""

    name = "template"

    def explain(
        self, symptoms: Sequence[Evidence], ranked_causes: Sequence[RankedCause]
    ) -> str:
        if not ranked_causes or all(c.cause_kind is CauseKind.UNKNOWN and not c.evidence for c in ranked_causes):
            if not symptoms:
                return "no root cause identified: no application-layer symptoms were observed"
            return "no root cause identified"
        top = ranked_causes[0]
        kind_text = top.cause_kind.value.replace("_", " ")
        lines = [
            f"Root cause: {kind_text} at {top.located_at}.",
        ]
        if symptoms:
            s = symptoms[0]
            lines.append(
                f"Symptom: {s.metric} on {s.entity} deviated {s.direction} (score {s.score:.1f})."
            )
        if top.evidence:
            parts = [
                f"{e.metric} on {e.entity} ({e.direction}, score {e.score:.1f})"
                for e in top.evidence[:3]
            ]
            lines.append("Supporting evidence: " + "; ".join(parts) + ".")
        if top.remediation:
            lines.append(f"Suggested first step: {top.remediation[0]}.")
        return " ".join(lines)


class HttpExplanationClient:
    """POSTs the report skeleton to an external service and records the
    exchange for replay; callers fall back to the template on any failure."""

    name = "external"

    def __init__(self, endpoint: str, api_key: str = "", timeout_s: float = 5.0, record_path=None):
        self.endpoint = endpoint
        self.api_key = api_key
        self.timeout_s = timeout_s
        self.record_path = record_path

    def explain(
        self, symptoms: Sequence[Evidence], ranked_causes: Sequence[RankedCause]
    ) -> str:
        body = json.dumps(
            {
                "symptoms": [s.to_doc() for s in symptoms],
                "ranked_causes": [c.to_doc() for c in ranked_causes],
            },
            sort_keys=True,
        ).encode("utf-8")
        request = urllib.request.Request(
            self.endpoint,
            data=body,
            headers={"Content-Type": "application/json"},
            method="POST",
        )
        if self.api_key:
            request.add_header("Authorization", f"Bearer {self.api_key}")
        with urllib.request.urlopen(request, timeout=self.timeout_s) as response:
            payload = json.loads(response.read().decode("utf-8"))
        narrative = payload["narrative"]
        if self.record_path:
            with open(self.record_path, "a", encoding="utf-8") as fh:
                fh.write(
                    json.dumps(
                        {"request": body.decode("utf-8"), "response": payload},
                        sort_keys=True,
                    )
                    + "\n"
                )
        return narrative


class ReplayExplanationClient:
    """Serves narratives recorded by HttpExplanationClient, in order."""

    name = "replay"

    def __init__(self, record_path):
        with open(record_path, "r", encoding="utf-8") as fh:
            self._responses = [json.loads(line)["response"]["narrative"] for line in fh if line.strip()]
        self._cursor = 0

    def explain(self, symptoms, ranked_causes) -> str:
        if self._cursor >= len(self._responses):
            raise IndexError("replay log exhausted")
        narrative = self._responses[self._cursor]
        self._cursor += 1
        return narrative


def explain(
    report: RcaReport,
    client: ExplanationClient | None = None,
) -> RcaReport:
    """Fill the narrative via the client, falling back to the template."""
    template = TemplateExplanationClient()
    chosen = client or template
    try:
        report.narrative = chosen.explain(report.symptoms, report.ranked_causes)
        report.narrative_source = chosen.name
    except Exception as exc:  # external clients may fail arbitrarily
        logger.warning("explanation client %s failed: %s", chosen.name, exc)
        report.narrative = template.explain(report.symptoms, report.ranked_causes)
        report.narrative_source = template.name
        report.explanation_fallback = True
    return report


def run_rca(
    graph: DependencyGraph,
    snapshot: TelemetrySnapshot,
    app_id: str,
    time_range: tuple[int, int] | None = None,
    params: DetectorParams | None = None,
    client: ExplanationClient | None = None,
    layer_weights: dict[Layer, float] | None = None,
    signatures: dict[tuple[str, str], CauseKind] | None = None,
) -> RcaReport:
    """Symptoms -> reachable anomalies -> ranked causes -> narrative."""
    if time_range is None:
        time_range = snapshot.time_range or (0, 0)
    symptoms = collect_symptoms(graph, snapshot, app_id, time_range, params)
    report = RcaReport(
        app_id=app_id,
        symptom_window=time_range,
        symptoms=symptoms,
        ranked_causes=[],
    )
    if symptoms:
        reachable = _reachable_entities(graph, snapshot, app_id)
        events = detect_all(snapshot, params, entities=reachable)
        in_window = [e for e in events if time_range[0] <= e.timestamp <= time_range[1]]
        report.ranked_causes = localize(
            graph, in_window, symptoms, app_id, reachable, layer_weights, signatures
        )
    return explain(report, client)
