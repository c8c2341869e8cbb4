"""Synthetic Clos cluster and workload telemetry generator with fault injection.

Produces the five telemetry source files plus a topology document and a
ground-truth manifest (placements, per-QP paths, byte totals, fault
schedule). The generator models the telemetry *effects* of faults, not
queueing physics: the system under test is the assurance pipeline, so
plausible, controllable signal injection is what matters.

Everything is deterministic per (specs, seed): a single RNG is threaded
through generation, iteration orders are fixed, and file lines are written
in a stable order, so identical runs produce byte-identical file sets.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from random import Random

from .errors import ScenarioError
from .ingest import (
    APP_METRICS_FILE,
    COLLECTIVE_FILE,
    FLOW_FILE,
    GPU_METRICS_FILE,
    NIC_COUNTERS_FILE,
    TOPOLOGY_FILE,
    serialize_collective_log,
    serialize_flow_record,
    serialize_metric_record,
    serialize_nic_counter,
)
from .model import (
    CollectiveLogRecord,
    CollectiveOp,
    EntityId,
    FlowRecord,
    GpuInfo,
    HostInfo,
    L4Protocol,
    Layer,
    Link,
    MetricSample,
    NicCounter,
    NicCounterRecord,
    NicInfo,
    SwitchInfo,
    SwitchTier,
    Topology,
    dedupe_links,
    save_topology,
)

SWITCH_METRICS_FILE = "switch_metrics.rec"
MANIFEST_FILE = "manifest.json"

# Seeded ECMP: spine index = (qp_id * this odd constant) mod spine count.
ECMP_HASH_CONSTANT = 2654435761

DEFAULT_START_TIME_US = 1736971200000000  # 2025-01-15T20:00:00Z


class WorkloadPattern(Enum):
    RING_ALLREDUCE = "ring_allreduce"
    ALL_TO_ALL = "all_to_all"
    BROADCAST = "broadcast"


class FaultKind(Enum):
    LINK_CONGESTION = "link_congestion"
    GPU_THROTTLE = "gpu_throttle"
    PACKET_LOSS = "packet_loss"


# Fault targets are constrained to the layer where the primary signal lives.
FAULT_TARGET_LAYER = {
    FaultKind.LINK_CONGESTION: Layer.SWITCH_PORT,
    FaultKind.GPU_THROTTLE: Layer.GPU,
    FaultKind.PACKET_LOSS: Layer.NIC,
}

EXPECTED_CAUSE_KIND = {
    FaultKind.LINK_CONGESTION: "network_congestion",
    FaultKind.GPU_THROTTLE: "gpu_thermal_throttle",
    FaultKind.PACKET_LOSS: "packet_loss",
}


@dataclass(frozen=True)
class ClusterSpec:
    hosts: int
    gpus_per_host: int = 1
    leaves: int = 2
    spines: int = 2
    hosts_per_leaf: int | None = None

    def effective_hosts_per_leaf(self) -> int:
        if self.hosts_per_leaf is not None:
            return self.hosts_per_leaf
        return math.ceil(self.hosts / self.leaves)

    def validate(self) -> None:
        if self.hosts < 1 or self.gpus_per_host < 1 or self.leaves < 1 or self.spines < 1:
            raise ScenarioError("cluster counts must all be >= 1")
        if self.hosts > self.leaves * self.effective_hosts_per_leaf():
            raise ScenarioError(
                f"{self.hosts} hosts exceed capacity of {self.leaves} leaves"
                f" x {self.effective_hosts_per_leaf()} hosts/leaf"
            )


@dataclass(frozen=True)
class WorkloadSpec:
    app_id: str
    placement: tuple[tuple[str, int], ...]  # (hostname, gpu index) per rank
    pattern: WorkloadPattern = WorkloadPattern.RING_ALLREDUCE
    iterations: int = 100
    bytes_per_op: int = 1 << 20
    channels: int = 1
    sample_interval_us: int | None = None  # None: simulation default

    def validate(self) -> None:
        if not self.app_id:
            raise ScenarioError("workload app_id must be non-empty")
        if len(self.placement) < 2:
            raise ScenarioError(f"workload {self.app_id}: needs >= 2 ranks")
        if self.iterations < 1:
            raise ScenarioError(f"workload {self.app_id}: iterations must be >= 1")
        if self.bytes_per_op < 1 or self.channels < 1:
            raise ScenarioError(f"workload {self.app_id}: bytes_per_op and channels must be >= 1")
        if self.sample_interval_us is not None and self.sample_interval_us <= 0:
            raise ScenarioError(f"workload {self.app_id}: sample_interval must be positive")


@dataclass(frozen=True)
class FaultSpec:
    kind: FaultKind
    target: EntityId
    start: int  # microseconds since epoch
    end: int

    def validate(self) -> None:
        if self.start >= self.end:
            raise ScenarioError(f"fault interval [{self.start}, {self.end}) is empty")
        expected_layer = FAULT_TARGET_LAYER[self.kind]
        if self.target.layer is not expected_layer:
            raise ScenarioError(
                f"{self.kind.value} targets a {expected_layer.value}, got {self.target}"
            )

    def active_at(self, t: int) -> bool:
        return self.start <= t < self.end


@dataclass(frozen=True)
class SimOptions:
    start_time_us: int = DEFAULT_START_TIME_US
    iteration_period_us: int = 100_000
    sample_interval_us: int = 1_000_000
    sampling_rate: float = 1.0
    ack_bytes: int = 64
    # Baselines
    gpu_util_pct: float = 88.0
    gpu_temp_c: float = 62.0
    gpu_mem_pct: float = 70.0
    queue_depth_bytes: float = 1200.0
    # Noise (one standard deviation, absolute units)
    gpu_util_noise: float = 1.0
    gpu_temp_noise: float = 0.8
    gpu_mem_noise: float = 0.8
    iteration_rate_noise_frac: float = 0.015
    queue_depth_noise: float = 60.0
    # Fault effect magnitudes
    congestion_queue_multiplier: float = 10.0
    congestion_cnp_per_s: int = 500
    congestion_iteration_factor: float = 0.4
    throttle_temp_c: float = 92.0
    throttle_util_pct: float = 25.0
    throttle_iteration_factor: float = 0.4
    loss_events_per_s: int = 200
    loss_iteration_factor: float = 0.5


@dataclass
class QpAssignment:
    qp_id: int
    app_id: str
    src_rank: int
    dst_rank: int
    channel: int
    path: tuple[EntityId, ...]  # nic, [port, switch, port]..., nic
    spine: str | None
    bytes_total: int = 0


@dataclass
class GroundTruth:
    """Oracle emitted alongside the telemetry; consistent by construction."""

    seed: int
    placements: dict[str, dict[int, dict[str, str]]]  # app -> rank -> {host,gpu,nic}
    host_nics: dict[str, list[str]]
    qps: list[QpAssignment]
    faults: list[dict]
    emitted: dict[str, int] = field(default_factory=dict)
    options: SimOptions = field(default_factory=SimOptions)

    def qp_by_id(self) -> dict[int, QpAssignment]:
        return {q.qp_id: q for q in self.qps}

    def to_doc(self) -> dict:
        return {
            "seed": self.seed,
            "ecmp_hash_constant": ECMP_HASH_CONSTANT,
            "placements": {
                app: {str(rank): info for rank, info in sorted(ranks.items())}
                for app, ranks in sorted(self.placements.items())
            },
            "host_nics": {h: list(ns) for h, ns in sorted(self.host_nics.items())},
            "qps": [
                {
                    "qp": q.qp_id,
                    "app": q.app_id,
                    "src_rank": q.src_rank,
                    "dst_rank": q.dst_rank,
                    "channel": q.channel,
                    "path": [str(e) for e in q.path],
                    "spine": q.spine,
                    "bytes_total": q.bytes_total,
                }
                for q in sorted(self.qps, key=lambda q: q.qp_id)
            ],
            "faults": self.faults,
            "emitted": dict(sorted(self.emitted.items())),
        }

    @staticmethod
    def from_doc(doc: dict) -> "GroundTruth":
        gt = GroundTruth(
            seed=doc["seed"],
            placements={
                app: {int(rank): dict(info) for rank, info in ranks.items()}
                for app, ranks in doc["placements"].items()
            },
            host_nics={h: list(ns) for h, ns in doc["host_nics"].items()},
            qps=[
                QpAssignment(
                    qp_id=q["qp"],
                    app_id=q["app"],
                    src_rank=q["src_rank"],
                    dst_rank=q["dst_rank"],
                    channel=q["channel"],
                    path=tuple(EntityId.parse(e) for e in q["path"]),
                    spine=q.get("spine"),
                    bytes_total=q.get("bytes_total", 0),
                )
                for q in doc["qps"]
            ],
            faults=[dict(f) for f in doc["faults"]],
        )
        gt.emitted = dict(doc.get("emitted", {}))
        return gt


# ---------------------------------------------------------------------------
# Cluster generation
# ---------------------------------------------------------------------------


def generate_cluster(spec: ClusterSpec, seed: int) -> Topology:
    """Build a leaf/spine Clos topology; valid under validate_topology."""
    spec.validate()
    rng = Random(seed)
    hpl = spec.effective_hosts_per_leaf()

    used_uuids: set[str] = set()

    def new_gpu_uuid() -> str:
        while True:
            uuid = "GPU-" + "".join(rng.choice("0123456789abcdef") for _ in range(8))
            if uuid not in used_uuids:
                used_uuids.add(uuid)
                return uuid

    hosts = []
    links = []
    for idx in range(1, spec.hosts + 1):
        hostname = f"node{idx}"
        leaf_idx = (idx - 1) // hpl + 1
        slot = (idx - 1) % hpl + 1
        leaf = f"leaf{leaf_idx}"
        port = f"p{slot}"
        nic = NicInfo(
            nic_id="eth0",
            ip=f"10.0.{idx >> 8}.{idx & 0xFF}",
            attached_switch=leaf,
            attached_port=port,
        )
        hosts.append(
            HostInfo(
                hostname=hostname,
                gpus=tuple(GpuInfo(new_gpu_uuid()) for _ in range(spec.gpus_per_host)),
                nics=(nic,),
            )
        )
        links.append(Link(EntityId.nic(hostname, "eth0"), EntityId.switch_port(leaf, port)))

    switches = []
    for l in range(1, spec.leaves + 1):
        ports = tuple(f"p{k}" for k in range(1, hpl + 1)) + tuple(
            f"u{s}" for s in range(1, spec.spines + 1)
        )
        switches.append(SwitchInfo(f"leaf{l}", SwitchTier.LEAF, ports))
    for s in range(1, spec.spines + 1):
        ports = tuple(f"d{l}" for l in range(1, spec.leaves + 1))
        switches.append(SwitchInfo(f"spine{s}", SwitchTier.SPINE, ports))
        for l in range(1, spec.leaves + 1):
            links.append(
                Link(EntityId.switch_port(f"leaf{l}", f"u{s}"), EntityId.switch_port(f"spine{s}", f"d{l}"))
            )

    return Topology(hosts=tuple(hosts), switches=tuple(switches), links=dedupe_links(links))


# ---------------------------------------------------------------------------
# Workload traffic model
# ---------------------------------------------------------------------------


def _pattern_pairs(pattern: WorkloadPattern, n_ranks: int) -> list[tuple[int, int]]:
    if pattern is WorkloadPattern.RING_ALLREDUCE:
        return [(i, (i + 1) % n_ranks) for i in range(n_ranks)]
    if pattern is WorkloadPattern.ALL_TO_ALL:
        return [(i, j) for i in range(n_ranks) for j in range(n_ranks) if i != j]
    return [(0, j) for j in range(1, n_ranks)]


_PATTERN_OP = {
    WorkloadPattern.RING_ALLREDUCE: CollectiveOp.ALL_REDUCE,
    WorkloadPattern.ALL_TO_ALL: CollectiveOp.SEND_RECV,
    WorkloadPattern.BROADCAST: CollectiveOp.BROADCAST,
}


def _fabric_path(
    topology: Topology,
    src_nic: NicInfo,
    src_host: str,
    dst_nic: NicInfo,
    dst_host: str,
    spine_count: int,
    qp_id: int,
) -> tuple[tuple[EntityId, ...], str | None]:
    """Hop list nic -> [ingress port, switch, egress port]* -> nic."""
    src_end = EntityId.nic(src_host, src_nic.nic_id)
    dst_end = EntityId.nic(dst_host, dst_nic.nic_id)
    src_leaf, src_port = src_nic.attached_switch, src_nic.attached_port
    dst_leaf, dst_port = dst_nic.attached_switch, dst_nic.attached_port

    if src_leaf == dst_leaf:
        hops = (
            src_end,
            EntityId.switch_port(src_leaf, src_port),
            EntityId.switch(src_leaf),
            EntityId.switch_port(src_leaf, dst_port),
            dst_end,
        )
        return hops, None

    spine_idx = (qp_id * ECMP_HASH_CONSTANT) % spine_count + 1
    spine = f"spine{spine_idx}"
    src_leaf_no = int(src_leaf.removeprefix("leaf"))
    dst_leaf_no = int(dst_leaf.removeprefix("leaf"))
    hops = (
        src_end,
        EntityId.switch_port(src_leaf, src_port),
        EntityId.switch(src_leaf),
        EntityId.switch_port(src_leaf, f"u{spine_idx}"),
        EntityId.switch_port(spine, f"d{src_leaf_no}"),
        EntityId.switch(spine),
        EntityId.switch_port(spine, f"d{dst_leaf_no}"),
        EntityId.switch_port(dst_leaf, f"u{spine_idx}"),
        EntityId.switch(dst_leaf),
        EntityId.switch_port(dst_leaf, dst_port),
        dst_end,
    )
    return hops, spine


def _path_switch_traversals(path: tuple[EntityId, ...]) -> list[tuple[str, str, str]]:
    """(switch_id, ingress port, egress port) per switch along the path."""
    out = []
    for i, hop in enumerate(path):
        if hop.layer is Layer.SWITCH:
            in_port = path[i - 1].key.split("/", 1)[1]
            out_port = path[i + 1].key.split("/", 1)[1]
            out.append((hop.key, in_port, out_port))
    return out


# ---------------------------------------------------------------------------
# Simulation
# ---------------------------------------------------------------------------


def simulate(
    topology: Topology,
    workloads: list[WorkloadSpec],
    faults: list[FaultSpec],
    seed: int,
    options: SimOptions | None = None,
) -> tuple[dict[str, list[str]], GroundTruth]:
    """Emit the five telemetry sources plus switch metrics and ground truth.

    Returns a mapping of canonical file name to its lines, and the manifest.
    """
    opt = options or SimOptions()
    rng = Random(seed)
    host_by_name = topology.host_by_name()

    for w in workloads:
        w.validate()
        for hostname, gpu_idx in w.placement:
            host = host_by_name.get(hostname)
            if host is None:
                raise ScenarioError(f"workload {w.app_id}: unknown host {hostname!r}")
            if gpu_idx >= len(host.gpus):
                raise ScenarioError(f"workload {w.app_id}: host {hostname!r} has no gpu #{gpu_idx}")
    seen_apps = set()
    for w in workloads:
        if w.app_id in seen_apps:
            raise ScenarioError(f"duplicate app_id {w.app_id!r}")
        seen_apps.add(w.app_id)

    sim_start = opt.start_time_us
    sim_end = sim_start + max(w.iterations for w in workloads) * opt.iteration_period_us
    spine_count = sum(1 for s in topology.switches if s.tier is SwitchTier.SPINE)

    for f in faults:
        f.validate()
        if f.end <= sim_start or f.start >= sim_end:
            raise ScenarioError(
                f"fault interval [{f.start}, {f.end}) outside simulation range"
                f" [{sim_start}, {sim_end})"
            )

    # --- QP assignment and path selection -------------------------------
    used_qps: set[int] = set()

    def new_qp() -> int:
        while True:
            qp = rng.randrange(1024, 1 << 24)
            if qp not in used_qps:
                used_qps.add(qp)
                return qp

    placements: dict[str, dict[int, dict[str, str]]] = {}
    qps: list[QpAssignment] = []
    qp_for: dict[tuple[str, int, int, int], QpAssignment] = {}
    for w in workloads:
        ranks = {}
        for rank, (hostname, gpu_idx) in enumerate(w.placement):
            host = host_by_name[hostname]
            ranks[rank] = {
                "host": hostname,
                "gpu": host.gpus[gpu_idx].uuid,
                "nic": host.nics[0].nic_id,
            }
        placements[w.app_id] = ranks
        for src, dst in _pattern_pairs(w.pattern, len(w.placement)):
            for channel in range(w.channels):
                qp_id = new_qp()
                src_host = w.placement[src][0]
                dst_host = w.placement[dst][0]
                if src_host == dst_host:
                    path: tuple[EntityId, ...] = ()
                    spine = None
                else:
                    path, spine = _fabric_path(
                        topology,
                        host_by_name[src_host].nics[0],
                        src_host,
                        host_by_name[dst_host].nics[0],
                        dst_host,
                        spine_count,
                        qp_id,
                    )
                assignment = QpAssignment(
                    qp_id=qp_id,
                    app_id=w.app_id,
                    src_rank=src,
                    dst_rank=dst,
                    channel=channel,
                    path=path,
                    spine=spine,
                    bytes_total=w.iterations * w.bytes_per_op,
                )
                qps.append(assignment)
                qp_for[(w.app_id, src, dst, channel)] = assignment

    # --- Fault bookkeeping ----------------------------------------------
    qp_ports: dict[int, set[str]] = {
        q.qp_id: {e.key for e in q.path if e.layer is Layer.SWITCH_PORT} for q in qps
    }
    app_of = {w.app_id: w for w in workloads}
    fault_docs: list[dict] = []
    app_fault_factor: dict[str, list[tuple[FaultSpec, float]]] = {w.app_id: [] for w in workloads}
    nic_cnp_faults: list[tuple[FaultSpec, set[str]]] = []  # nic entity keys getting CNP signal
    nic_loss_faults: list[FaultSpec] = []
    gpu_throttle_faults: list[FaultSpec] = []
    congested_ports: list[FaultSpec] = []

    for f in faults:
        affected: set[str] = set()
        warning = None
        if f.kind is FaultKind.LINK_CONGESTION:
            endpoint_nics: set[str] = set()
            for q in qps:
                if f.target.key in qp_ports[q.qp_id]:
                    affected.add(q.app_id)
                    info = placements[q.app_id]
                    for rank in (q.src_rank, q.dst_rank):
                        endpoint_nics.add(f"{info[rank]['host']}/{info[rank]['nic']}")
            if not affected:
                warning = "target port carries no workload traffic"
            congested_ports.append(f)
            nic_cnp_faults.append((f, endpoint_nics))
            factor = opt.congestion_iteration_factor
        elif f.kind is FaultKind.GPU_THROTTLE:
            for app, ranks in placements.items():
                if any(info["gpu"] == f.target.key for info in ranks.values()):
                    affected.add(app)
            if not affected:
                warning = "target gpu hosts no workload rank"
            gpu_throttle_faults.append(f)
            factor = opt.throttle_iteration_factor
        else:
            for q in qps:
                info = placements[q.app_id]
                for rank in (q.src_rank, q.dst_rank):
                    if f"{info[rank]['host']}/{info[rank]['nic']}" == f.target.key:
                        affected.add(q.app_id)
            if not affected:
                warning = "target nic carries no workload traffic"
            nic_loss_faults.append(f)
            factor = opt.loss_iteration_factor
        for app in affected:
            app_fault_factor[app].append((f, factor))
        doc = {
            "kind": f.kind.value,
            "target": str(f.target),
            "start": f.start,
            "end": f.end,
            "affected_apps": sorted(affected),
            "expected_cause_kind": EXPECTED_CAUSE_KIND[f.kind],
        }
        if warning:
            doc["warning"] = warning
        fault_docs.append(doc)

    # --- Collective log + flow records ----------------------------------
    collective_lines: list[str] = []
    flow_lines: list[str] = []
    nic_ip = {
        f"{h.hostname}/{n.nic_id}": n.ip for h in topology.hosts for n in h.nics
    }

    for w in workloads:
        op = _PATTERN_OP[w.pattern]
        pairs = _pattern_pairs(w.pattern, len(w.placement))
        info = placements[w.app_id]
        for it in range(w.iterations):
            t_iter = sim_start + it * opt.iteration_period_us
            for pair_idx, (src, dst) in enumerate(pairs):
                for channel in range(w.channels):
                    q = qp_for[(w.app_id, src, dst, channel)]
                    ts = t_iter + pair_idx * 50 + channel * 10
                    rec = CollectiveLogRecord(
                        app_id=w.app_id,
                        timestamp=ts,
                        op_kind=op,
                        bytes=w.bytes_per_op,
                        src_rank=src,
                        dst_rank=dst,
                        src_gpu_uuid=info[src]["gpu"],
                        hostname=info[src]["host"],
                        channel=channel,
                        qp_id=q.qp_id,
                    )
                    collective_lines.append(serialize_collective_log(rec))
                    if not q.path:
                        continue
                    src_key = f"{info[src]['host']}/{info[src]['nic']}"
                    dst_key = f"{info[dst]['host']}/{info[dst]['nic']}"
                    src_ip, dst_ip = nic_ip[src_key], nic_ip[dst_key]
                    packets = max(1, w.bytes_per_op // 4096)
                    traversals = _path_switch_traversals(q.path)
                    for hop_idx, (switch, in_port, out_port) in enumerate(traversals):
                        if opt.sampling_rate < 1.0 and rng.random() >= opt.sampling_rate:
                            continue
                        flow_lines.append(
                            serialize_flow_record(
                                FlowRecord(
                                    switch_id=switch,
                                    ingress_port=in_port,
                                    egress_port=out_port,
                                    timestamp=ts + 5 * (hop_idx + 1),
                                    src_ip=src_ip,
                                    dst_ip=dst_ip,
                                    l4_protocol=L4Protocol.UDP,
                                    dst_port=4791,
                                    qp_id=q.qp_id,
                                    sampled_packets=packets,
                                    sampled_bytes=w.bytes_per_op,
                                )
                            )
                        )
                    # Reverse-direction ACK traffic on the mirrored path.
                    for hop_idx, (switch, in_port, out_port) in enumerate(reversed(traversals)):
                        if opt.sampling_rate < 1.0 and rng.random() >= opt.sampling_rate:
                            continue
                        flow_lines.append(
                            serialize_flow_record(
                                FlowRecord(
                                    switch_id=switch,
                                    ingress_port=out_port,
                                    egress_port=in_port,
                                    timestamp=ts + 500 + 5 * (hop_idx + 1),
                                    src_ip=dst_ip,
                                    dst_ip=src_ip,
                                    l4_protocol=L4Protocol.UDP,
                                    dst_port=4791,
                                    qp_id=q.qp_id,
                                    sampled_packets=1,
                                    sampled_bytes=opt.ack_bytes,
                                )
                            )
                        )

    # --- Sampled metrics --------------------------------------------------
    gpu_lines: list[str] = []
    app_lines: list[str] = []
    switch_lines: list[str] = []
    nic_lines: list[str] = []

    ticks = []
    t = sim_start
    while t <= sim_end:
        ticks.append(t)
        t += opt.sample_interval_us

    # GPU metrics for every placed gpu.
    placed_gpus: list[tuple[str, str]] = sorted(
        {
            (info["gpu"], info["host"])
            for ranks in placements.values()
            for info in ranks.values()
        }
    )
    for uuid, hostname in placed_gpus:
        throttled = [f for f in gpu_throttle_faults if f.target.key == uuid]
        for tick in ticks:
            active = any(f.active_at(tick) for f in throttled)
            util = (opt.throttle_util_pct if active else opt.gpu_util_pct) + rng.gauss(
                0, opt.gpu_util_noise
            )
            temp = (opt.throttle_temp_c if active else opt.gpu_temp_c) + rng.gauss(
                0, opt.gpu_temp_noise
            )
            mem = opt.gpu_mem_pct + rng.gauss(0, opt.gpu_mem_noise)
            labels = (("gpu_uuid", uuid), ("hostname", hostname))
            for metric, value in (
                ("gpu.utilization", util),
                ("gpu.temperature", temp),
                ("gpu.memory_used_pct", mem),
            ):
                gpu_lines.append(
                    serialize_metric_record(
                        MetricSample(
                            entity=EntityId.gpu(uuid),
                            metric=metric,
                            timestamp=tick,
                            value=round(value, 3),
                            labels=labels,
                        )
                    )
                )

    # Application metrics, sampled at each workload's own interval.
    base_rate = 1_000_000 / opt.iteration_period_us
    for w in workloads:
        interval = w.sample_interval_us or opt.sample_interval_us
        t = sim_start
        while t <= sim_end:
            factor = 1.0
            for f, fac in app_fault_factor[w.app_id]:
                if f.active_at(t):
                    factor = min(factor, fac)
            rate = base_rate * factor * (1 + rng.gauss(0, opt.iteration_rate_noise_frac))
            app_lines.append(
                serialize_metric_record(
                    MetricSample(
                        entity=EntityId.app(w.app_id),
                        metric="app.iteration_rate",
                        timestamp=t,
                        value=round(max(rate, 0.0), 4),
                        labels=(("app", w.app_id),),
                    )
                )
            )
            t += interval

    # Switch queue depth for every port on an active path (plus fault targets).
    active_ports: set[str] = set()
    for ports in qp_ports.values():
        active_ports.update(ports)
    for f in congested_ports:
        active_ports.add(f.target.key)
    for port_key in sorted(active_ports):
        switch_id, port_id = port_key.split("/", 1)
        port_faults = [f for f in congested_ports if f.target.key == port_key]
        for tick in ticks:
            depth = opt.queue_depth_bytes
            if any(f.active_at(tick) for f in port_faults):
                depth *= opt.congestion_queue_multiplier
            depth += rng.gauss(0, opt.queue_depth_noise)
            switch_lines.append(
                serialize_metric_record(
                    MetricSample(
                        entity=EntityId.switch_port(switch_id, port_id),
                        metric="switch.queue_depth",
                        timestamp=tick,
                        value=round(max(depth, 0.0), 1),
                        labels=(("port", port_id), ("switch", switch_id)),
                    )
                )
            )

    # NIC counters (cumulative) for every nic of a placed host.
    active_nics: set[str] = set()
    for ranks in placements.values():
        for info in ranks.values():
            active_nics.add(f"{info['host']}/{info['nic']}")
    for f in nic_loss_faults:
        active_nics.add(f.target.key)

    interval_s = opt.sample_interval_us / 1_000_000
    tx_rate: dict[str, float] = {k: 0.0 for k in active_nics}
    rx_rate: dict[str, float] = {k: 0.0 for k in active_nics}
    for q in qps:
        if not q.path:
            continue  # intra-host traffic never touches the NIC
        w = app_of[q.app_id]
        per_s = w.bytes_per_op * (1_000_000 / opt.iteration_period_us)
        info = placements[q.app_id]
        src_key = f"{info[q.src_rank]['host']}/{info[q.src_rank]['nic']}"
        dst_key = f"{info[q.dst_rank]['host']}/{info[q.dst_rank]['nic']}"
        if src_key in tx_rate:
            tx_rate[src_key] += per_s
        if dst_key in rx_rate:
            rx_rate[dst_key] += per_s

    for nic_key in sorted(active_nics):
        hostname, nic_id = nic_key.split("/", 1)
        counters = {c: 0 for c in NicCounter}
        cnp_sources = [f for f, nics in nic_cnp_faults if nic_key in nics]
        loss_sources = [f for f in nic_loss_faults if f.target.key == nic_key]
        for tick in ticks:
            counters[NicCounter.TX_BYTES] += int(tx_rate[nic_key] * interval_s)
            counters[NicCounter.RX_BYTES] += int(rx_rate[nic_key] * interval_s)
            for f in cnp_sources:
                if f.active_at(tick):
                    counters[NicCounter.CNP_RECEIVED] += int(opt.congestion_cnp_per_s * interval_s)
                    counters[NicCounter.CNP_SENT] += int(opt.congestion_cnp_per_s * interval_s)
                    counters[NicCounter.ECN_MARKED] += int(opt.congestion_cnp_per_s * interval_s)
            for f in loss_sources:
                if f.active_at(tick):
                    counters[NicCounter.OUT_OF_SEQUENCE] += int(opt.loss_events_per_s * interval_s)
                    counters[NicCounter.RETRANSMITS] += int(opt.loss_events_per_s * interval_s)
            for counter in NicCounter:
                nic_lines.append(
                    serialize_nic_counter(
                        NicCounterRecord(
                            hostname=hostname,
                            nic_id=nic_id,
                            timestamp=tick,
                            counter=counter,
                            value=counters[counter],
                        )
                    )
                )

    files = {
        COLLECTIVE_FILE: collective_lines,
        FLOW_FILE: flow_lines,
        GPU_METRICS_FILE: gpu_lines,
        APP_METRICS_FILE: app_lines,
        SWITCH_METRICS_FILE: switch_lines,
        NIC_COUNTERS_FILE: nic_lines,
    }
    truth = GroundTruth(
        seed=seed,
        placements=placements,
        host_nics={h.hostname: [n.nic_id for n in h.nics] for h in topology.hosts},
        qps=qps,
        faults=fault_docs,
        emitted={
            "collective": len(collective_lines),
            "flow": len(flow_lines),
            "metric": len(gpu_lines) + len(app_lines) + len(switch_lines),
            "nic_counter": len(nic_lines),
        },
        options=opt,
    )
    return files, truth


def write_files(files: dict[str, list[str]], topology: Topology, truth: GroundTruth, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, lines in files.items():
        with open(out / name, "w", encoding="utf-8") as fh:
            for line in lines:
                fh.write(line)
                fh.write("\n")
    save_topology(topology, out / TOPOLOGY_FILE)
    with open(out / MANIFEST_FILE, "w", encoding="utf-8") as fh:
        json.dump(truth.to_doc(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_manifest(path) -> GroundTruth:
    with open(Path(path), "r", encoding="utf-8") as fh:
        return GroundTruth.from_doc(json.load(fh))


# ---------------------------------------------------------------------------
# Scenario documents
# ---------------------------------------------------------------------------


@dataclass
class Scenario:
    seed: int
    cluster: ClusterSpec
    workloads: list[WorkloadSpec]
    faults: list[FaultSpec]
    options: SimOptions


def scenario_from_doc(doc: dict) -> Scenario:
    """Parse a scenario document; fault times are seconds from sim start."""
    try:
        seed = int(doc["seed"])
        cdoc = doc["cluster"]
        cluster = ClusterSpec(
            hosts=int(cdoc["hosts"]),
            gpus_per_host=int(cdoc.get("gpus_per_host", 1)),
            leaves=int(cdoc.get("leaves", 2)),
            spines=int(cdoc.get("spines", 2)),
            hosts_per_leaf=cdoc.get("hosts_per_leaf"),
        )
        opt = SimOptions()
        odoc = doc.get("options", {})
        known = {
            "iteration_period_ms": ("iteration_period_us", 1000),
            "sample_interval_s": ("sample_interval_us", 1_000_000),
        }
        updates = {}
        for key, value in odoc.items():
            if key in known:
                attr, scale = known[key]
                updates[attr] = int(value * scale)
            elif hasattr(opt, key):
                updates[key] = value
            else:
                raise ScenarioError(f"unknown option {key!r} in scenario")
        opt = replace(opt, **updates)
        workloads = [
            WorkloadSpec(
                app_id=w["app_id"],
                placement=tuple((h, int(g)) for h, g in w["placement"]),
                pattern=WorkloadPattern(w.get("pattern", "ring_allreduce")),
                iterations=int(w.get("iterations", 100)),
                bytes_per_op=int(w.get("bytes_per_op", 1 << 20)),
                channels=int(w.get("channels", 1)),
                sample_interval_us=(
                    int(w["sample_interval_s"] * 1_000_000)
                    if "sample_interval_s" in w
                    else None
                ),
            )
            for w in doc["workloads"]
        ]
        faults = [
            FaultSpec(
                kind=FaultKind(f["kind"]),
                target=EntityId.parse(f["target"]),
                start=opt.start_time_us + int(f["start_s"] * 1_000_000),
                end=opt.start_time_us + int(f["end_s"] * 1_000_000),
            )
            for f in doc.get("faults", [])
        ]
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"bad scenario document: {exc}") from exc
    return Scenario(seed=seed, cluster=cluster, workloads=workloads, faults=faults, options=opt)


def load_scenario(path) -> Scenario:
    with open(Path(path), "r", encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"scenario is not valid JSON: {exc}") from exc
    return scenario_from_doc(doc)


def run_scenario(scenario: Scenario, out_dir) -> tuple[Topology, GroundTruth]:
    topology = generate_cluster(scenario.cluster, scenario.seed)
    files, truth = simulate(
        topology, scenario.workloads, scenario.faults, scenario.seed, scenario.options
    )
    write_files(files, topology, truth, out_dir)
    return topology, truth
