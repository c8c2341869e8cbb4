"""Cross-layer dependency graph: workloads mapped to the compute and fabric
elements they run on, with evidence attached to every edge.

Edges are evidence-based: each one records which telemetry records or
topology elements created it, so the graph is auditable and downstream root
cause analysis can explain itself. Construction is union-of-evidence — more
records never remove edges.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

from .errors import SnapshotFormatError, UnknownAppError
from .model import (
    EntityId,
    Layer,
    TelemetrySnapshot,
    Topology,
)

# Edges supporting more evidence than this keep a sample plus the count.
EVIDENCE_SAMPLE_LIMIT = 16


class Relation(Enum):
    RUNS_ON = "runs_on"            # Application -> Gpu
    HOSTED_BY = "hosted_by"        # Gpu -> Host
    ATTACHED_TO = "attached_to"    # Host -> Nic
    UPLINKS_TO = "uplinks_to"      # Nic -> SwitchPort
    PORT_OF = "port_of"            # SwitchPort -> Switch
    FABRIC_LINK = "fabric_link"    # SwitchPort -> SwitchPort


RELATION_SIGNATURE = {
    Relation.RUNS_ON: (Layer.APPLICATION, Layer.GPU),
    Relation.HOSTED_BY: (Layer.GPU, Layer.HOST),
    Relation.ATTACHED_TO: (Layer.HOST, Layer.NIC),
    Relation.UPLINKS_TO: (Layer.NIC, Layer.SWITCH_PORT),
    Relation.PORT_OF: (Layer.SWITCH_PORT, Layer.SWITCH),
    Relation.FABRIC_LINK: (Layer.SWITCH_PORT, Layer.SWITCH_PORT),
}


@dataclass(frozen=True)
class Edge:
    src: EntityId
    dst: EntityId
    relation: Relation
    evidence: tuple[str, ...]
    evidence_count: int = 1

    def sort_key(self):
        return (self.relation.value, self.src.sort_key(), self.dst.sort_key())


@dataclass(frozen=True)
class DependencyGraph:
    nodes: tuple[EntityId, ...]
    edges: tuple[Edge, ...]
    coverage: tuple[tuple[str, int], ...] = ()

    def node_set(self) -> frozenset[EntityId]:
        return frozenset(self.nodes)

    def apps(self) -> list[str]:
        return sorted(n.key for n in self.nodes if n.layer is Layer.APPLICATION)

    def out_edges(self) -> dict[EntityId, list[Edge]]:
        adj: dict[EntityId, list[Edge]] = {}
        for edge in self.edges:
            adj.setdefault(edge.src, []).append(edge)
        return adj

    def fabric_adjacency(self) -> dict[EntityId, list[EntityId]]:
        """Undirected adjacency over fabric_link edges."""
        adj: dict[EntityId, list[EntityId]] = {}
        for edge in self.edges:
            if edge.relation is Relation.FABRIC_LINK:
                adj.setdefault(edge.src, []).append(edge.dst)
                adj.setdefault(edge.dst, []).append(edge.src)
        return adj

    def coverage_map(self) -> dict[str, int]:
        return dict(self.coverage)


def _evidence_tuple(refs: set[str]) -> tuple[tuple[str, ...], int]:
    ordered = sorted(refs)
    return tuple(ordered[:EVIDENCE_SAMPLE_LIMIT]), len(ordered)


def build_graph(
    snapshot: TelemetrySnapshot,
    evidence_horizon_us: int | None = None,
) -> DependencyGraph:
    """Assemble the layered graph from collective-log evidence plus topology.

    `evidence_horizon_us` optionally restricts app bindings to collective
    records no older than that horizon before the snapshot's end; the
    default considers the full time range.
    """
    topology = snapshot.topology
    nodes: set[EntityId] = set()
    evidence: dict[tuple[EntityId, EntityId, Relation], set[str]] = {}

    def add_edge(src: EntityId, dst: EntityId, relation: Relation, ref: str):
        want = RELATION_SIGNATURE[relation]
        if (src.layer, dst.layer) != want:
            raise ValueError(f"{relation.value} cannot join {src.layer} -> {dst.layer}")
        nodes.add(src)
        nodes.add(dst)
        evidence.setdefault((src, dst, relation), set()).add(ref)

    # Topology-derived layers exist even with no telemetry.
    for host in topology.hosts:
        host_ent = EntityId.host(host.hostname)
        nodes.add(host_ent)
        for gpu in host.gpus:
            add_edge(EntityId.gpu(gpu.uuid), host_ent, Relation.HOSTED_BY, f"topology:gpu:{gpu.uuid}")
        for nic in host.nics:
            nic_ent = EntityId.nic(host.hostname, nic.nic_id)
            nic_ref = f"topology:nic:{host.hostname}/{nic.nic_id}"
            add_edge(host_ent, nic_ent, Relation.ATTACHED_TO, nic_ref)
            port_ent = EntityId.switch_port(nic.attached_switch, nic.attached_port)
            add_edge(nic_ent, port_ent, Relation.UPLINKS_TO, nic_ref)
    for switch in topology.switches:
        switch_ent = EntityId.switch(switch.switch_id)
        nodes.add(switch_ent)
        for port in switch.ports:
            add_edge(
                EntityId.switch_port(switch.switch_id, port),
                switch_ent,
                Relation.PORT_OF,
                f"topology:switch:{switch.switch_id}",
            )
    for link in topology.links:
        canon = link.canonical()
        if canon.a.layer is Layer.SWITCH_PORT and canon.b.layer is Layer.SWITCH_PORT:
            add_edge(canon.a, canon.b, Relation.FABRIC_LINK, f"topology:link:{canon.a.key}--{canon.b.key}")

    # Collective records bind applications to GPUs (and confirm gpu->host).
    horizon_start = None
    if evidence_horizon_us is not None and snapshot.time_range is not None:
        horizon_start = snapshot.time_range[1] - evidence_horizon_us
    known_gpus = {g.uuid for h in topology.hosts for g in h.gpus}
    for idx, rec in enumerate(snapshot.collective):
        if horizon_start is not None and rec.timestamp < horizon_start:
            continue
        ref = f"collective[{idx}]"
        app_ent = EntityId.app(rec.app_id)
        gpu_ent = EntityId.gpu(rec.src_gpu_uuid)
        add_edge(app_ent, gpu_ent, Relation.RUNS_ON, ref)
        if rec.src_gpu_uuid not in known_gpus:
            # Label-only correlation for gpus the topology does not list.
            add_edge(gpu_ent, EntityId.host(rec.hostname), Relation.HOSTED_BY, ref)

    edges = tuple(
        sorted(
            (
                Edge(src, dst, rel, *_evidence_tuple(refs))
                for (src, dst, rel), refs in evidence.items()
            ),
            key=Edge.sort_key,
        )
    )

    app_nodes = [n for n in nodes if n.layer is Layer.APPLICATION]
    coverage = {f"edges.{rel.value}": 0 for rel in Relation}
    for edge in edges:
        coverage[f"edges.{edge.relation.value}"] += 1
    coverage["nodes"] = len(nodes)
    coverage["apps"] = len(app_nodes)
    coverage["apps_without_gpus"] = sum(
        1
        for app in app_nodes
        if not any(e.src == app and e.relation is Relation.RUNS_ON for e in edges)
    )

    return DependencyGraph(
        nodes=tuple(sorted(nodes, key=EntityId.sort_key)),
        edges=edges,
        coverage=tuple(sorted(coverage.items())),
    )


def resolve_evidence(snapshot: TelemetrySnapshot, ref: str) -> object:
    """Dereference an edge evidence string against its snapshot/topology."""
    if ref.startswith("collective[") and ref.endswith("]"):
        idx = int(ref[len("collective["):-1])
        return snapshot.collective[idx]
    if ref.startswith("topology:"):
        _, kind, key = ref.split(":", 2)
        topo = snapshot.topology
        if kind == "gpu":
            for host in topo.hosts:
                if any(g.uuid == key for g in host.gpus):
                    return host
        elif kind == "nic":
            info = topo.nic_entities().get(key)
            if info is not None:
                return info
        elif kind == "switch":
            info = topo.switch_by_id().get(key)
            if info is not None:
                return info
        elif kind == "link":
            a, b = key.split("--", 1)
            for link in topo.links:
                canon = link.canonical()
                if canon.a.key == a and canon.b.key == b:
                    return link
        raise KeyError(f"evidence {ref!r} not found in topology")
    raise KeyError(f"unrecognized evidence reference {ref!r}")


def app_entities(graph: DependencyGraph, app: EntityId, layer: Layer) -> set[EntityId]:
    """All `layer` entities reachable from `app` via layered edges.

    Fabric links are traversed only for SwitchPort/Switch queries: each
    reachable switch contributes its fabric-facing ports, their one-hop
    fabric peers, and those peers' switches — the elements the app's
    traffic can traverse under ECMP — without flooding the whole fabric.
    """
    if app.layer is not Layer.APPLICATION or app not in graph.node_set():
        raise UnknownAppError(app.key)
    if layer is Layer.APPLICATION:
        return {app}

    adj = graph.out_edges()
    reachable: set[EntityId] = set()
    frontier = [app]
    while frontier:
        node = frontier.pop()
        for edge in adj.get(node, []):
            if edge.relation is Relation.FABRIC_LINK:
                continue
            if edge.dst not in reachable:
                reachable.add(edge.dst)
                frontier.append(edge.dst)

    if layer in (Layer.SWITCH_PORT, Layer.SWITCH):
        ports_of_switch: dict[EntityId, list[EntityId]] = {}
        for edge in graph.edges:
            if edge.relation is Relation.PORT_OF:
                ports_of_switch.setdefault(edge.dst, []).append(edge.src)
        fabric = graph.fabric_adjacency()
        own_switches = [n for n in reachable if n.layer is Layer.SWITCH]
        for switch in own_switches:
            for port in ports_of_switch.get(switch, []):
                peers = fabric.get(port)
                if not peers:
                    continue
                reachable.add(port)
                for peer in peers:
                    reachable.add(peer)
                    for edge in adj.get(peer, []):
                        if edge.relation is Relation.PORT_OF:
                            reachable.add(edge.dst)

    return {n for n in reachable if n.layer is layer}


# ---------------------------------------------------------------------------
# Export / import
# ---------------------------------------------------------------------------

_DOT_SHAPE = {
    Layer.APPLICATION: "ellipse",
    Layer.GPU: "box",
    Layer.HOST: "box3d",
    Layer.NIC: "component",
    Layer.SWITCH_PORT: "point",
    Layer.SWITCH: "diamond",
}


def export_graph(graph: DependencyGraph, fmt: str = "structured") -> str:
    if fmt == "dot":
        lines = ["digraph dependencies {", "  rankdir=TB;"]
        for layer in (
            Layer.APPLICATION,
            Layer.GPU,
            Layer.HOST,
            Layer.NIC,
            Layer.SWITCH_PORT,
            Layer.SWITCH,
        ):
            members = [n for n in graph.nodes if n.layer is layer]
            if not members:
                continue
            lines.append(f"  subgraph cluster_{layer.value} {{")
            lines.append(f'    label="{layer.value}";')
            for node in members:
                lines.append(f'    "{node}" [shape={_DOT_SHAPE[layer]}];')
            lines.append("  }")
        for edge in graph.edges:
            lines.append(f'  "{edge.src}" -> "{edge.dst}" [label="{edge.relation.value}"];')
        lines.append("}")
        return "\n".join(lines) + "\n"
    if fmt == "structured":
        doc = {
            "nodes": [str(n) for n in graph.nodes],
            "edges": [
                {
                    "from": str(e.src),
                    "to": str(e.dst),
                    "relation": e.relation.value,
                    "evidence": list(e.evidence),
                    "evidence_count": e.evidence_count,
                }
                for e in graph.edges
            ],
            "coverage": dict(graph.coverage),
        }
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"
    raise ValueError(f"unknown export format {fmt!r}")


def import_graph(text: str) -> DependencyGraph:
    try:
        doc = json.loads(text)
        nodes = tuple(EntityId.parse(n) for n in doc["nodes"])
        edges = tuple(
            Edge(
                src=EntityId.parse(e["from"]),
                dst=EntityId.parse(e["to"]),
                relation=Relation(e["relation"]),
                evidence=tuple(e["evidence"]),
                evidence_count=e["evidence_count"],
            )
            for e in doc["edges"]
        )
        coverage = tuple(sorted(doc.get("coverage", {}).items()))
    except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
        raise SnapshotFormatError(f"bad graph document: {exc}") from exc
    return DependencyGraph(nodes=nodes, edges=edges, coverage=coverage)


def app_subgraph(graph: DependencyGraph, app: EntityId) -> DependencyGraph:
    """Restriction of the graph to entities reachable from one application."""
    keep: set[EntityId] = {app}
    for layer in (Layer.GPU, Layer.HOST, Layer.NIC, Layer.SWITCH_PORT, Layer.SWITCH):
        keep.update(app_entities(graph, app, layer))
    edges = tuple(e for e in graph.edges if e.src in keep and e.dst in keep)
    coverage = {f"edges.{rel.value}": 0 for rel in Relation}
    for edge in edges:
        coverage[f"edges.{edge.relation.value}"] += 1
    coverage["nodes"] = len(keep)
    coverage["apps"] = 1
    coverage["apps_without_gpus"] = 0
    return DependencyGraph(
        nodes=tuple(sorted(keep, key=EntityId.sort_key)),
        edges=edges,
        coverage=tuple(sorted(coverage.items())),
    )
