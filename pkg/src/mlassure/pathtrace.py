"""GPU-to-GPU fabric path reconstruction per queue pair.

Collective logs provide the (app, rank pair) -> QP binding; flow records
observed at switches provide per-switch (ingress, egress) evidence; the
topology provides the link structure that chains them. Only forward-
direction records (matching the collective rank order) drive the hop
chain; reverse ACK traffic counts toward volume only.

When a switch on the path has no observation, the gap is bridged only if
exactly one topology-consistent candidate explains it; ambiguous gaps
truncate the trace rather than guess, and `complete` stays false whenever
any link on the path went unwitnessed.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import InconsistentFlowsError, UnknownAppError
from .model import (
    EntityId,
    FlowRecord,
    Layer,
    TelemetrySnapshot,
    Topology,
)


@dataclass(frozen=True)
class PathTrace:
    app_id: str
    src_gpu: EntityId | None  # None when the rank's GPU could not be resolved
    dst_gpu: EntityId | None
    qp_id: int
    hops: tuple[EntityId, ...]
    per_hop_bytes: tuple[tuple[str, int], ...]  # (switch_id, forward sampled bytes)
    complete: bool

    def to_doc(self) -> dict:
        return {
            "app": self.app_id,
            "src_gpu": str(self.src_gpu) if self.src_gpu else None,
            "dst_gpu": str(self.dst_gpu) if self.dst_gpu else None,
            "qp": self.qp_id,
            "hops": [str(h) for h in self.hops],
            "per_hop_bytes": [list(h) for h in self.per_hop_bytes],
            "complete": self.complete,
        }


@dataclass(frozen=True)
class VolumeRow:
    qp_id: int
    src_rank: int
    dst_rank: int
    total_bytes: int
    reverse_bytes: int
    per_hop: tuple[tuple[str, int], ...]


def qps_for_pair(
    snapshot: TelemetrySnapshot, app_id: str, src_rank: int, dst_rank: int
) -> list[int]:
    """Deduplicated ascending QP ids used by (app, src_rank -> dst_rank)."""
    records = snapshot.by_app.get(app_id)
    if records is None:
        raise UnknownAppError(app_id)
    return sorted(
        {r.qp_id for r in records if r.src_rank == src_rank and r.dst_rank == dst_rank}
    )


@dataclass
class _Observation:
    ingress: str
    egress: str
    bytes: int


def _collect_observations(
    flows: list[FlowRecord], src_ip: str, dst_ip: str
) -> dict[str, _Observation]:
    """Forward observations keyed by switch; divergent egress is an error."""
    obs: dict[str, _Observation] = {}
    for rec in flows:
        if rec.src_ip != src_ip or rec.dst_ip != dst_ip:
            continue
        seen = obs.get(rec.switch_id)
        if seen is None:
            obs[rec.switch_id] = _Observation(rec.ingress_port, rec.egress_port, rec.sampled_bytes)
        elif (seen.ingress, seen.egress) != (rec.ingress_port, rec.egress_port):
            raise InconsistentFlowsError(
                f"switch {rec.switch_id} qp {rec.qp_id}: records imply both "
                f"{seen.ingress}->{seen.egress} and {rec.ingress_port}->{rec.egress_port}"
            )
        else:
            seen.bytes += rec.sampled_bytes
    return obs


def assemble_path(
    topology: Topology,
    flows: list[FlowRecord],
    src_nic: EntityId,
    dst_nic: EntityId,
) -> tuple[tuple[EntityId, ...], tuple[tuple[str, int], ...], bool]:
    """Chain hops from src NIC to dst NIC; returns (hops, per-hop bytes, complete).

    All flows must belong to one queue pair. `complete` is true only when
    every link along the chain was witnessed by at least one observation.
    """
    nic_infos = topology.nic_entities()
    src_info = nic_infos.get(src_nic.key)
    dst_info = nic_infos.get(dst_nic.key)
    if src_info is None or dst_info is None:
        return (), (), False
    obs = _collect_observations(flows, src_info.ip, dst_info.ip)

    adjacency = topology.adjacency()

    def link_peer(switch_id: str, port_id: str) -> EntityId | None:
        peers = adjacency.get(EntityId.switch_port(switch_id, port_id), [])
        return peers[0] if len(peers) == 1 else None

    hops: list[EntityId] = [src_nic]
    per_hop: list[tuple[str, int]] = []
    complete = True
    current_switch = src_info.attached_switch
    entry_port = src_info.attached_port
    visited: set[str] = set()

    while True:
        if current_switch in visited:
            return tuple(hops), tuple(per_hop), False  # defensive: no loops
        visited.add(current_switch)
        hops.append(EntityId.switch_port(current_switch, entry_port))
        hops.append(EntityId.switch(current_switch))

        seen = obs.get(current_switch)
        if seen is not None:
            if seen.ingress != entry_port:
                raise InconsistentFlowsError(
                    f"switch {current_switch}: observed ingress {seen.ingress!r}"
                    f" contradicts chain entry {entry_port!r}"
                )
            egress = seen.egress
            per_hop.append((current_switch, seen.bytes))
        else:
            # Unobserved switch: bridge the gap only when exactly one
            # topology-consistent egress explains the next evidence.
            complete = False
            switch = topology.switch_by_id().get(current_switch)
            if switch is None:
                return tuple(hops), tuple(per_hop), False
            candidates = []
            for port in switch.ports:
                if port == entry_port:
                    continue
                peer = link_peer(current_switch, port)
                if peer is None:
                    continue
                if peer.layer is Layer.NIC and peer == dst_nic:
                    candidates.append(port)
                elif peer.layer is Layer.SWITCH_PORT:
                    peer_switch, peer_port = peer.key.split("/", 1)
                    if peer_switch in visited:
                        continue
                    peer_obs = obs.get(peer_switch)
                    if peer_obs is not None and peer_obs.ingress == peer_port:
                        candidates.append(port)
                    elif peer_obs is None and _downstream_reaches(
                        topology, peer_switch, dst_nic, visited
                    ):
                        # No evidence either way; count it as a candidate so
                        # ambiguity (>1 such port) truncates instead of guessing.
                        candidates.append(port)
            if len(candidates) != 1:
                return tuple(hops), tuple(per_hop), False
            egress = candidates[0]

        hops.append(EntityId.switch_port(current_switch, egress))
        peer = link_peer(current_switch, egress)
        if peer is None:
            return tuple(hops), tuple(per_hop), False
        if peer.layer is Layer.NIC:
            hops.append(peer)
            if peer != dst_nic:
                return tuple(hops), tuple(per_hop), False
            # Final host-facing link: witnessed iff this switch was observed.
            if current_switch not in obs:
                complete = False
            return tuple(hops), tuple(per_hop), complete
        next_switch, next_port = peer.key.split("/", 1)
        # The leaf->spine link is witnessed if either side was observed.
        if current_switch not in obs and next_switch not in obs:
            complete = False
        current_switch, entry_port = next_switch, next_port


def _downstream_reaches(
    topology: Topology, switch_id: str, dst_nic: EntityId, visited: set[str]
) -> bool:
    """True if dst_nic is reachable from switch_id avoiding visited switches."""
    frontier = [switch_id]
    seen = set(visited)
    adjacency = topology.adjacency()
    switch_ports: dict[str, list[str]] = {}
    for sw in topology.switches:
        switch_ports[sw.switch_id] = list(sw.ports)
    while frontier:
        sw = frontier.pop()
        if sw in seen:
            continue
        seen.add(sw)
        for port in switch_ports.get(sw, []):
            for peer in adjacency.get(EntityId.switch_port(sw, port), []):
                if peer == dst_nic:
                    return True
                if peer.layer is Layer.SWITCH_PORT:
                    peer_switch = peer.key.split("/", 1)[0]
                    if peer_switch not in seen:
                        frontier.append(peer_switch)
    return False


def _rank_bindings(snapshot: TelemetrySnapshot, app_id: str) -> dict[int, tuple[str, str]]:
    """rank -> (hostname, gpu uuid) from the src side of collective records."""
    bindings: dict[int, tuple[str, str]] = {}
    for rec in snapshot.by_app.get(app_id, ()):
        bindings.setdefault(rec.src_rank, (rec.hostname, rec.src_gpu_uuid))
    return bindings


def _nic_for(
    topology: Topology, hostname: str, flows: list[FlowRecord], prefer_src: bool
) -> EntityId | None:
    host = topology.host_by_name().get(hostname)
    if host is None or not host.nics:
        return None
    if len(host.nics) == 1:
        return EntityId.nic(hostname, host.nics[0].nic_id)
    ips = {rec.src_ip for rec in flows} if prefer_src else {rec.dst_ip for rec in flows}
    for nic in host.nics:
        if nic.ip in ips:
            return EntityId.nic(hostname, nic.nic_id)
    return None


def trace(
    graph,
    snapshot: TelemetrySnapshot,
    app_id: str,
    src_rank: int,
    dst_rank: int,
) -> list[PathTrace]:
    """One PathTrace per QP the pair uses, ordered by QP id."""
    if EntityId.app(app_id) not in graph.node_set():
        raise UnknownAppError(app_id)
    qps = qps_for_pair(snapshot, app_id, src_rank, dst_rank)
    bindings = _rank_bindings(snapshot, app_id)
    topology = snapshot.topology
    host_by_name = topology.host_by_name()
    nic_by_ip = {
        nic.ip: (host.hostname, nic.nic_id)
        for host in topology.hosts
        for nic in host.nics
    }

    traces: list[PathTrace] = []
    for qp_id in qps:
        flows = list(snapshot.by_qp.get(qp_id, ()))
        src_binding = bindings.get(src_rank)
        src_gpu = EntityId.gpu(src_binding[1]) if src_binding else None
        src_nic = (
            _nic_for(topology, src_binding[0], flows, prefer_src=True) if src_binding else None
        )

        # Receive-only ranks (broadcast) never appear on the src side of a
        # collective record; fall back to the flow destination IP.
        dst_binding = bindings.get(dst_rank)
        dst_gpu = EntityId.gpu(dst_binding[1]) if dst_binding else None
        if dst_binding is not None:
            dst_nic = _nic_for(topology, dst_binding[0], flows, prefer_src=False)
        else:
            dst_nic = None
            src_ip = None
            if src_nic is not None:
                src_ip = topology.nic_entities()[src_nic.key].ip
            dst_ips = {rec.dst_ip for rec in flows if src_ip and rec.src_ip == src_ip}
            if len(dst_ips) == 1:
                hostname, nic_id = nic_by_ip.get(next(iter(dst_ips)), (None, None))
                if hostname is not None:
                    dst_nic = EntityId.nic(hostname, nic_id)
                    host = host_by_name[hostname]
                    if len(host.gpus) == 1:
                        dst_gpu = EntityId.gpu(host.gpus[0].uuid)

        if not flows or src_nic is None or dst_nic is None:
            traces.append(
                PathTrace(
                    app_id=app_id,
                    src_gpu=src_gpu,
                    dst_gpu=dst_gpu,
                    qp_id=qp_id,
                    hops=(),
                    per_hop_bytes=(),
                    complete=False,
                )
            )
            continue
        hops, per_hop, complete = assemble_path(topology, flows, src_nic, dst_nic)
        traces.append(
            PathTrace(
                app_id=app_id,
                src_gpu=src_gpu,
                dst_gpu=dst_gpu,
                qp_id=qp_id,
                hops=hops,
                per_hop_bytes=per_hop,
                complete=complete,
            )
        )
    return traces


def traced_entities(graph, snapshot: TelemetrySnapshot, app_id: str) -> set[EntityId]:
    """Union of hop entities over all rank pairs of one app."""
    pairs = sorted(
        {(r.src_rank, r.dst_rank) for r in snapshot.by_app.get(app_id, ())}
    )
    out: set[EntityId] = set()
    for src, dst in pairs:
        for t in trace(graph, snapshot, app_id, src, dst):
            out.update(t.hops)
    return out


def render_path_dot(path_trace: PathTrace) -> str:
    """Dot rendering of one trace: the hop chain overlaid with volumes."""
    lines = ["digraph path {", "  rankdir=LR;"]
    volumes = dict(path_trace.per_hop_bytes)
    for hop in path_trace.hops:
        if hop.layer is Layer.SWITCH and hop.key in volumes:
            lines.append(f'  "{hop}" [shape=diamond label="{hop}\\n{volumes[hop.key]} B"];')
        elif hop.layer is Layer.SWITCH:
            lines.append(f'  "{hop}" [shape=diamond];')
        elif hop.layer is Layer.NIC:
            lines.append(f'  "{hop}" [shape=component];')
        else:
            lines.append(f'  "{hop}" [shape=point];')
    for a, b in zip(path_trace.hops, path_trace.hops[1:]):
        lines.append(f'  "{a}" -> "{b}";')
    lines.append(f'  label="qp {path_trace.qp_id} complete={str(path_trace.complete).lower()}";')
    lines.append("}")
    return "\n".join(lines) + "\n"


def volume_breakdown(snapshot: TelemetrySnapshot, app_id: str) -> list[VolumeRow]:
    """Per-QP traffic accounting: forward totals at the first hop, reverse
    volume, and per-switch forward byte sums; ordered by QP id."""
    records = snapshot.by_app.get(app_id, ())
    pair_of: dict[int, tuple[int, int]] = {}
    for rec in records:
        pair_of.setdefault(rec.qp_id, (rec.src_rank, rec.dst_rank))

    bindings = _rank_bindings(snapshot, app_id)
    nic_infos = snapshot.topology.nic_entities()
    host_by_name = snapshot.topology.host_by_name()

    rows: list[VolumeRow] = []
    for qp_id in sorted(pair_of):
        src_rank, dst_rank = pair_of[qp_id]
        flows = snapshot.by_qp.get(qp_id, ())
        src_ips: set[str] = set()
        src_binding = bindings.get(src_rank)
        if src_binding is not None:
            host = host_by_name.get(src_binding[0])
            if host is not None:
                src_ips = {n.ip for n in host.nics}
        forward_by_switch: dict[str, int] = {}
        reverse_bytes = 0
        first_hop_switch = None
        if src_binding is not None:
            host = host_by_name.get(src_binding[0])
            if host is not None and host.nics:
                first_hop_switch = host.nics[0].attached_switch
        for rec in flows:
            if src_ips and rec.src_ip in src_ips:
                forward_by_switch[rec.switch_id] = (
                    forward_by_switch.get(rec.switch_id, 0) + rec.sampled_bytes
                )
            else:
                reverse_bytes += rec.sampled_bytes
        if first_hop_switch is not None and first_hop_switch in forward_by_switch:
            total = forward_by_switch[first_hop_switch]
        elif forward_by_switch:
            total = max(forward_by_switch.values())
        else:
            total = 0
        rows.append(
            VolumeRow(
                qp_id=qp_id,
                src_rank=src_rank,
                dst_rank=dst_rank,
                total_bytes=total,
                reverse_bytes=reverse_bytes,
                per_hop=tuple(sorted(forward_by_switch.items())),
            )
        )
    return rows
