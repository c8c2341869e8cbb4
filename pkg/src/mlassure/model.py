"""Domain types shared by every stage of the assurance pipeline.

Defines the entity/layer model, the four telemetry record kinds, the fabric
topology descriptor, the metric registry, and the normalized telemetry
snapshot that analysis modules consume.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

from .errors import RegistryConflictError, SnapshotFormatError

QP_ID_MAX = 1 << 24  # RoCEv2 QP numbers are 24-bit
ROCE_V2_PORT = 4791

_GPU_KEY_RE = re.compile(r"^GPU-[0-9a-fA-F-]{8,}$")


class Layer(Enum):
    """Layers of the cross-layer model, ordered top (application) down."""

    APPLICATION = "Application"
    GPU = "Gpu"
    HOST = "Host"
    NIC = "Nic"
    SWITCH_PORT = "SwitchPort"
    SWITCH = "Switch"


# Display/traversal order, top of the stack first.
LAYER_ORDER = (
    Layer.APPLICATION,
    Layer.GPU,
    Layer.HOST,
    Layer.NIC,
    Layer.SWITCH_PORT,
    Layer.SWITCH,
)
_LAYER_RANK = {layer: i for i, layer in enumerate(LAYER_ORDER)}


@dataclass(frozen=True, order=False)
class EntityId:
    """Identity of one monitored element: a layer plus an opaque key.

    Keys are composite where needed so membership is self-describing:
    NICs are "hostname/nic-id", switch ports are "switch-id/port-id".
    """

    layer: Layer
    key: str

    def __post_init__(self):
        if not self.key:
            raise ValueError("entity key must be non-empty")

    @staticmethod
    def app(app_id: str) -> "EntityId":
        return EntityId(Layer.APPLICATION, app_id)

    @staticmethod
    def gpu(uuid: str) -> "EntityId":
        return EntityId(Layer.GPU, uuid)

    @staticmethod
    def host(hostname: str) -> "EntityId":
        return EntityId(Layer.HOST, hostname)

    @staticmethod
    def nic(hostname: str, nic_id: str) -> "EntityId":
        return EntityId(Layer.NIC, f"{hostname}/{nic_id}")

    @staticmethod
    def switch_port(switch_id: str, port_id: str) -> "EntityId":
        return EntityId(Layer.SWITCH_PORT, f"{switch_id}/{port_id}")

    @staticmethod
    def switch(switch_id: str) -> "EntityId":
        return EntityId(Layer.SWITCH, switch_id)

    def sort_key(self) -> tuple[int, str]:
        return (_LAYER_RANK[self.layer], self.key)

    def lex_key(self) -> tuple[str, str]:
        """Tie-break key: lexicographic by (layer name, entity key)."""
        return (self.layer.value, self.key)

    def __str__(self) -> str:
        return f"{self.layer.value}:{self.key}"

    @staticmethod
    def parse(text: str) -> "EntityId":
        layer_name, sep, key = text.partition(":")
        if not sep or not key:
            raise ValueError(f"not an entity id: {text!r}")
        try:
            layer = Layer(layer_name)
        except ValueError:
            raise ValueError(f"unknown layer {layer_name!r} in {text!r}") from None
        return EntityId(layer, key)


def is_valid_gpu_key(key: str) -> bool:
    """GPU keys follow the GPU UUID label form: "GPU-" + 8+ hex/uuid chars."""
    return bool(_GPU_KEY_RE.match(key))


class CollectiveOp(Enum):
    ALL_REDUCE = "AllReduce"
    ALL_GATHER = "AllGather"
    REDUCE_SCATTER = "ReduceScatter"
    BROADCAST = "Broadcast"
    SEND_RECV = "SendRecv"


class L4Protocol(Enum):
    UDP = "UDP"
    TCP = "TCP"


class NicCounter(Enum):
    CNP_SENT = "cnp_sent"
    CNP_RECEIVED = "cnp_received"
    ECN_MARKED = "ecn_marked"
    PAUSE_FRAMES = "pause_frames"
    OUT_OF_SEQUENCE = "out_of_sequence"
    RETRANSMITS = "retransmits"
    RX_BYTES = "rx_bytes"
    TX_BYTES = "tx_bytes"


@dataclass(frozen=True)
class MetricSample:
    """One time-series point bound to an entity.

    Timestamps are integer microseconds since the Unix epoch, as everywhere
    in this package. Labels are preserved verbatim from the source line.
    """

    entity: EntityId
    metric: str
    timestamp: int
    value: float
    labels: tuple[tuple[str, str], ...] = ()

    def label_map(self) -> dict[str, str]:
        return dict(self.labels)


@dataclass(frozen=True)
class CollectiveLogRecord:
    """One collective-communication log line (AllReduce etc.) for an app."""

    app_id: str
    timestamp: int
    op_kind: CollectiveOp
    bytes: int
    src_rank: int
    dst_rank: int
    src_gpu_uuid: str
    hostname: str
    channel: int
    qp_id: int

    def __post_init__(self):
        if self.src_rank == self.dst_rank:
            raise ValueError("src_rank must differ from dst_rank")
        if not 0 <= self.qp_id < QP_ID_MAX:
            raise ValueError(f"qp_id {self.qp_id} outside 24-bit range")
        if self.bytes < 0:
            raise ValueError("bytes must be non-negative")


@dataclass(frozen=True)
class FlowRecord:
    """One sampled flow observation exported by a switch."""

    switch_id: str
    ingress_port: str
    egress_port: str
    timestamp: int
    src_ip: str
    dst_ip: str
    l4_protocol: L4Protocol
    dst_port: int
    qp_id: int | None
    sampled_packets: int
    sampled_bytes: int

    def __post_init__(self):
        if self.ingress_port == self.egress_port:
            raise ValueError("ingress_port must differ from egress_port")
        if self.qp_id is not None and not 0 <= self.qp_id < QP_ID_MAX:
            raise ValueError(f"qp_id {self.qp_id} outside 24-bit range")


@dataclass(frozen=True)
class NicCounterRecord:
    """One cumulative hardware counter reading from a host NIC."""

    hostname: str
    nic_id: str
    timestamp: int
    counter: NicCounter
    value: int

    def __post_init__(self):
        if self.value < 0:
            raise ValueError("counter value must be non-negative")


# ---------------------------------------------------------------------------
# Metric registry
# ---------------------------------------------------------------------------


class Unit(Enum):
    PERCENT = "percent"
    BYTES = "bytes"
    CELSIUS = "celsius"
    WATTS = "watts"
    OPS_PER_SECOND = "ops/second"
    EVENTS_PER_SECOND = "events/second"


class Direction(Enum):
    HIGHER_IS_BAD = "higher_is_bad"
    LOWER_IS_BAD = "lower_is_bad"
    BAND = "band"


@dataclass(frozen=True)
class MetricSpec:
    name: str
    unit: Unit
    direction: Direction


class MetricRegistry:
    """Known metric names with their units and badness direction.

    Parsers quarantine samples whose metric name is not registered; the SLE
    engine uses the direction to interpret single-sided bounds.
    """

    def __init__(self):
        self._specs: dict[str, MetricSpec] = {}

    def register(self, name: str, unit: Unit, direction: Direction) -> MetricSpec:
        existing = self._specs.get(name)
        spec = MetricSpec(name, unit, direction)
        if existing is not None and existing != spec:
            raise RegistryConflictError(
                f"metric {name!r} already registered as "
                f"({existing.unit.value}, {existing.direction.value})"
            )
        self._specs[name] = spec
        return spec

    def get(self, name: str) -> MetricSpec | None:
        return self._specs.get(name)

    def __contains__(self, name: str) -> bool:
        return name in self._specs

    def names(self) -> list[str]:
        return sorted(self._specs)


def nic_rate_metric(counter: NicCounter) -> str:
    """Metric name for the per-second rate derived from a NIC counter."""
    return f"nic.{counter.value}.rate"


def default_registry() -> MetricRegistry:
    """Registry preloaded with the metric names the harness and CLI use."""
    reg = MetricRegistry()
    reg.register("gpu.utilization", Unit.PERCENT, Direction.BAND)
    reg.register("gpu.temperature", Unit.CELSIUS, Direction.HIGHER_IS_BAD)
    reg.register("gpu.memory_used_pct", Unit.PERCENT, Direction.HIGHER_IS_BAD)
    reg.register("gpu.power", Unit.WATTS, Direction.HIGHER_IS_BAD)
    reg.register("app.iteration_rate", Unit.OPS_PER_SECOND, Direction.LOWER_IS_BAD)
    reg.register("app.collective_rate", Unit.OPS_PER_SECOND, Direction.LOWER_IS_BAD)
    reg.register("app.loss", Unit.PERCENT, Direction.HIGHER_IS_BAD)
    reg.register("switch.queue_depth", Unit.BYTES, Direction.HIGHER_IS_BAD)
    for counter in NicCounter:
        reg.register(nic_rate_metric(counter), Unit.EVENTS_PER_SECOND, Direction.HIGHER_IS_BAD)
    return reg


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------


class SwitchTier(Enum):
    LEAF = "leaf"
    SPINE = "spine"


@dataclass(frozen=True)
class GpuInfo:
    uuid: str


@dataclass(frozen=True)
class NicInfo:
    nic_id: str
    ip: str
    attached_switch: str
    attached_port: str


@dataclass(frozen=True)
class HostInfo:
    hostname: str
    gpus: tuple[GpuInfo, ...]
    nics: tuple[NicInfo, ...]


@dataclass(frozen=True)
class SwitchInfo:
    switch_id: str
    tier: SwitchTier
    ports: tuple[str, ...]


@dataclass(frozen=True)
class Link:
    """Bidirectional link between two endpoints (SwitchPort or Nic entities)."""

    a: EntityId
    b: EntityId

    def canonical(self) -> "Link":
        if (self.a.layer.value, self.a.key) <= (self.b.layer.value, self.b.key):
            return self
        return Link(self.b, self.a)


@dataclass(frozen=True)
class Topology:
    hosts: tuple[HostInfo, ...]
    switches: tuple[SwitchInfo, ...]
    links: tuple[Link, ...]

    def host_by_name(self) -> dict[str, HostInfo]:
        return {h.hostname: h for h in self.hosts}

    def switch_by_id(self) -> dict[str, SwitchInfo]:
        return {s.switch_id: s for s in self.switches}

    def nic_entities(self) -> dict[str, NicInfo]:
        """Map from Nic entity key (hostname/nic-id) to its NicInfo."""
        out = {}
        for host in self.hosts:
            for nic in host.nics:
                out[f"{host.hostname}/{nic.nic_id}"] = nic
        return out

    def adjacency(self) -> dict[EntityId, list[EntityId]]:
        """Undirected endpoint adjacency over the deduplicated link set."""
        adj: dict[EntityId, list[EntityId]] = {}
        for link in self.links:
            adj.setdefault(link.a, []).append(link.b)
            adj.setdefault(link.b, []).append(link.a)
        for peers in adj.values():
            peers.sort(key=lambda e: e.sort_key())
        return adj

    def link_peer(self, end: EntityId) -> EntityId | None:
        """The opposite endpoint of the unique link at `end`, if any."""
        peers = self.adjacency().get(end, [])
        return peers[0] if len(peers) == 1 else None


def dedupe_links(links: Iterable[Link]) -> tuple[Link, ...]:
    seen = {}
    for link in links:
        canon = link.canonical()
        seen[(canon.a, canon.b)] = canon
    return tuple(sorted(seen.values(), key=lambda l: (l.a.sort_key(), l.b.sort_key())))


def validate_topology(topology: Topology) -> list[str]:
    """Check every structural invariant; returns one entry per violation.

    Violations are data, not failures: the list is empty for a valid
    topology and deterministically ordered (lexicographic by the offending
    element's key, then message).
    """
    found: list[tuple[str, str]] = []

    def violate(element: str, message: str):
        found.append((element, message))

    hostnames: set[str] = set()
    gpu_uuids: set[str] = set()
    nic_keys: set[str] = set()
    for host in topology.hosts:
        if not host.hostname:
            violate("", "host with empty hostname")
            continue
        if host.hostname in hostnames:
            violate(host.hostname, f"duplicate hostname {host.hostname!r}")
        hostnames.add(host.hostname)
        for gpu in host.gpus:
            if not is_valid_gpu_key(gpu.uuid):
                violate(gpu.uuid, f"gpu uuid {gpu.uuid!r} on {host.hostname!r} is not GPU-<8+ hex> form")
            if gpu.uuid in gpu_uuids:
                violate(gpu.uuid, f"duplicate gpu uuid {gpu.uuid!r}")
            gpu_uuids.add(gpu.uuid)
        for nic in host.nics:
            key = f"{host.hostname}/{nic.nic_id}"
            if key in nic_keys:
                violate(key, f"duplicate nic {key!r}")
            nic_keys.add(key)

    switch_ports: set[str] = set()
    tier_of: dict[str, SwitchTier] = {}
    for switch in topology.switches:
        if switch.switch_id in tier_of:
            violate(switch.switch_id, f"duplicate switch {switch.switch_id!r}")
        tier_of[switch.switch_id] = switch.tier
        for port in switch.ports:
            key = f"{switch.switch_id}/{port}"
            if key in switch_ports:
                violate(key, f"duplicate port {key!r}")
            switch_ports.add(key)

    def endpoint_exists(end: EntityId) -> bool:
        if end.layer is Layer.SWITCH_PORT:
            return end.key in switch_ports
        if end.layer is Layer.NIC:
            return end.key in nic_keys
        return False

    linked_ends: set[EntityId] = set()
    for link in topology.links:
        for end in (link.a, link.b):
            if end.layer not in (Layer.SWITCH_PORT, Layer.NIC):
                violate(end.key, f"link endpoint {end} has layer {end.layer.value}, expected SwitchPort or Nic")
            elif not endpoint_exists(end):
                violate(end.key, f"link references unknown endpoint {end.key!r}")
            else:
                linked_ends.add(end)
        # Clos discipline: switch-switch links must be leaf<->spine.
        if link.a.layer is Layer.SWITCH_PORT and link.b.layer is Layer.SWITCH_PORT:
            sw_a = link.a.key.split("/", 1)[0]
            sw_b = link.b.key.split("/", 1)[0]
            tier_a, tier_b = tier_of.get(sw_a), tier_of.get(sw_b)
            if tier_a is not None and tier_a == tier_b:
                violate(
                    link.a.key,
                    f"{tier_a.value}-{tier_a.value} link {link.a.key!r} -- {link.b.key!r} breaks Clos bipartiteness",
                )
        # Host-facing links must terminate at a leaf.
        if {link.a.layer, link.b.layer} == {Layer.SWITCH_PORT, Layer.NIC}:
            port_end = link.a if link.a.layer is Layer.SWITCH_PORT else link.b
            sw = port_end.key.split("/", 1)[0]
            if tier_of.get(sw) is SwitchTier.SPINE:
                violate(port_end.key, f"spine port {port_end.key!r} is linked to a host NIC")

    for host in topology.hosts:
        for nic in host.nics:
            key = f"{host.hostname}/{nic.nic_id}"
            port_key = f"{nic.attached_switch}/{nic.attached_port}"
            if port_key not in switch_ports:
                violate(key, f"nic {key!r} attaches to unknown port {port_key!r}")
                continue
            expected = Link(EntityId(Layer.NIC, key), EntityId(Layer.SWITCH_PORT, port_key)).canonical()
            present = any(link.canonical() == expected for link in topology.links)
            if not present:
                violate(key, f"nic {key!r} attachment to {port_key!r} has no matching link")

    return [message for _, message in sorted(found)]


# ---------------------------------------------------------------------------
# Topology <-> structured document
# ---------------------------------------------------------------------------


def topology_to_doc(topology: Topology) -> dict:
    def end_doc(end: EntityId):
        if end.layer is Layer.SWITCH_PORT:
            sw, port = end.key.split("/", 1)
            return {"switch": sw, "port": port}
        host, nic = end.key.split("/", 1)
        return {"host": host, "nic": nic}

    return {
        "hosts": [
            {
                "hostname": h.hostname,
                "gpus": [{"uuid": g.uuid} for g in h.gpus],
                "nics": [
                    {
                        "nic_id": n.nic_id,
                        "ip": n.ip,
                        "attached_switch": n.attached_switch,
                        "attached_port": n.attached_port,
                    }
                    for n in h.nics
                ],
            }
            for h in topology.hosts
        ],
        "switches": [
            {"switch_id": s.switch_id, "tier": s.tier.value, "ports": list(s.ports)}
            for s in topology.switches
        ],
        "links": [{"a": end_doc(l.a), "b": end_doc(l.b)} for l in topology.links],
    }


def topology_from_doc(doc: Mapping) -> Topology:
    def parse_end(end: Mapping) -> EntityId:
        if "switch" in end:
            return EntityId.switch_port(end["switch"], end["port"])
        if "host" in end:
            return EntityId.nic(end["host"], end["nic"])
        raise SnapshotFormatError(f"link endpoint {end!r} names neither a switch port nor a nic")

    try:
        hosts = tuple(
            HostInfo(
                hostname=h["hostname"],
                gpus=tuple(GpuInfo(g["uuid"]) for g in h.get("gpus", [])),
                nics=tuple(
                    NicInfo(n["nic_id"], n["ip"], n["attached_switch"], n["attached_port"])
                    for n in h.get("nics", [])
                ),
            )
            for h in doc.get("hosts", [])
        )
        switches = tuple(
            SwitchInfo(s["switch_id"], SwitchTier(s["tier"]), tuple(s["ports"]))
            for s in doc.get("switches", [])
        )
        links = dedupe_links(Link(parse_end(l["a"]), parse_end(l["b"])) for l in doc.get("links", []))
    except (KeyError, TypeError, ValueError) as exc:
        raise SnapshotFormatError(f"bad topology document: {exc}") from exc
    return Topology(hosts=hosts, switches=switches, links=links)


def load_topology(path) -> Topology:
    with open(path, "r", encoding="utf-8") as fh:
        return topology_from_doc(json.load(fh))


def save_topology(topology: Topology, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(topology_to_doc(topology), fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# Snapshot
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TelemetrySnapshot:
    """Normalized, time-ordered store of all ingested records plus indexes.

    Immutable after construction; safe to share across concurrent readers.
    """

    topology: Topology
    collective: tuple[CollectiveLogRecord, ...]
    flows: tuple[FlowRecord, ...]
    metrics: tuple[MetricSample, ...]
    nic_counters: tuple[NicCounterRecord, ...]
    quarantined_entities: frozenset[str] = frozenset()
    by_app: Mapping[str, tuple[CollectiveLogRecord, ...]] = field(default_factory=dict)
    by_qp: Mapping[int, tuple[FlowRecord, ...]] = field(default_factory=dict)
    by_entity: Mapping[EntityId, tuple[MetricSample, ...]] = field(default_factory=dict)
    time_range: tuple[int, int] | None = None

    @staticmethod
    def build(
        topology: Topology,
        collective: Sequence[CollectiveLogRecord],
        flows: Sequence[FlowRecord],
        metrics: Sequence[MetricSample],
        nic_counters: Sequence[NicCounterRecord],
        quarantined_entities: Iterable[str] = (),
    ) -> "TelemetrySnapshot":
        """Sort, index, and freeze one snapshot. Single-writer step.

        Sorting is stable; records arriving at the same timestamp preserve
        their source order, so identical inputs build identical snapshots.
        """
        coll = tuple(sorted(collective, key=lambda r: r.timestamp))
        flws = tuple(sorted(flows, key=lambda r: r.timestamp))
        mets = tuple(sorted(metrics, key=lambda r: r.timestamp))
        nics = tuple(sorted(nic_counters, key=lambda r: r.timestamp))

        by_app: dict[str, list[CollectiveLogRecord]] = {}
        qp_owner: dict[int, str] = {}
        for rec in coll:
            owner = qp_owner.setdefault(rec.qp_id, rec.app_id)
            if owner != rec.app_id:
                raise ValueError(
                    f"qp {rec.qp_id} claimed by both apps {owner!r} and {rec.app_id!r}"
                )
            by_app.setdefault(rec.app_id, []).append(rec)

        by_qp: dict[int, list[FlowRecord]] = {}
        for rec in flws:
            if rec.qp_id is not None:
                by_qp.setdefault(rec.qp_id, []).append(rec)

        by_entity: dict[EntityId, list[MetricSample]] = {}
        for sample in mets:
            by_entity.setdefault(sample.entity, []).append(sample)

        stamps = [
            r.timestamp
            for seq in (coll, flws, mets, nics)
            for r in (seq[:1] + seq[-1:])
        ]
        time_range = (min(stamps), max(stamps)) if stamps else None

        return TelemetrySnapshot(
            topology=topology,
            collective=coll,
            flows=flws,
            metrics=mets,
            nic_counters=nics,
            quarantined_entities=frozenset(quarantined_entities),
            by_app={k: tuple(v) for k, v in by_app.items()},
            by_qp={k: tuple(v) for k, v in by_qp.items()},
            by_entity={k: tuple(v) for k, v in by_entity.items()},
            time_range=time_range,
        )

    def app_ids(self) -> list[str]:
        return sorted(self.by_app)

    def qp_to_app(self) -> dict[int, str]:
        return {rec.qp_id: rec.app_id for rec in self.collective}
