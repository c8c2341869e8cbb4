"""Dependency graph construction, traversal, and export."""

import pytest

from mlassure.depgraph import (
    RELATION_SIGNATURE,
    Relation,
    app_entities,
    app_subgraph,
    build_graph,
    export_graph,
    import_graph,
    resolve_evidence,
)
from mlassure.errors import UnknownAppError
from mlassure.ingest import ingest
from mlassure.model import EntityId, Layer, TelemetrySnapshot

from conftest import APP_A, APP_B, make_run, ring_workload


class TestBuildGraph:
    def test_app_runs_on_exactly_placed_gpus(self, tmp_path):
        run = make_run(tmp_path, [ring_workload(APP_A, hosts=range(1, 5), iterations=50)])
        app = EntityId.app(APP_A)
        gpus = app_entities(run.graph, app, Layer.GPU)
        expected = {
            EntityId.gpu(info["gpu"]) for info in run.truth.placements[APP_A].values()
        }
        assert gpus == expected
        runs_on = [
            e for e in run.graph.edges if e.relation is Relation.RUNS_ON and e.src == app
        ]
        assert len(runs_on) == 4

    def test_gpu_host_nic_mappings_match_manifest(self, nofault_run):
        graph = nofault_run.graph
        truth = nofault_run.truth
        hosted = {
            (e.src.key, e.dst.key) for e in graph.edges if e.relation is Relation.HOSTED_BY
        }
        for info in truth.placements[APP_A].values():
            assert (info["gpu"], info["host"]) in hosted
        attached = {
            (e.src.key, e.dst.key) for e in graph.edges if e.relation is Relation.ATTACHED_TO
        }
        for host, nics in truth.host_nics.items():
            for nic in nics:
                assert (host, f"{host}/{nic}") in attached

    def test_empty_snapshot_topology_only(self, cluster8):
        snapshot = TelemetrySnapshot.build(cluster8, [], [], [], [])
        graph = build_graph(snapshot)
        assert graph.apps() == []
        assert all(e.relation is not Relation.RUNS_ON for e in graph.edges)
        # Topology layers are all present.
        layers = {n.layer for n in graph.nodes}
        assert layers == {Layer.GPU, Layer.HOST, Layer.NIC, Layer.SWITCH_PORT, Layer.SWITCH}

    def test_disjoint_apps_share_only_fabric(self, two_app_run):
        graph = two_app_run.graph
        a, b = EntityId.app(APP_A), EntityId.app(APP_B)
        for layer in (Layer.GPU, Layer.HOST, Layer.NIC):
            ents_a = app_entities(graph, a, layer)
            ents_b = app_entities(graph, b, layer)
            assert ents_a and ents_b
            assert not ents_a & ents_b

    def test_layer_discipline(self, nofault_run):
        for edge in nofault_run.graph.edges:
            want = RELATION_SIGNATURE[edge.relation]
            assert (edge.src.layer, edge.dst.layer) == want

    def test_every_edge_has_resolvable_evidence(self, nofault_run):
        for edge in nofault_run.graph.edges:
            assert edge.evidence_count >= 1
            assert edge.evidence
            for ref in edge.evidence:
                assert resolve_evidence(nofault_run.snapshot, ref) is not None

    def test_evidence_soundness_deleting_app_records(self, two_app_run):
        snap = two_app_run.snapshot
        without_a = TelemetrySnapshot.build(
            snap.topology,
            [r for r in snap.collective if r.app_id != APP_A],
            snap.flows,
            snap.metrics,
            snap.nic_counters,
            snap.quarantined_entities,
        )
        before = {(e.src, e.dst, e.relation) for e in two_app_run.graph.edges}
        after = {(e.src, e.dst, e.relation) for e in build_graph(without_a).edges}
        removed = before - after
        assert removed
        assert all(rel is Relation.RUNS_ON and src == EntityId.app(APP_A) for src, _, rel in removed)
        assert not (after - before)

    def test_monotonicity_adding_records(self, two_app_run):
        snap = two_app_run.snapshot
        reduced = TelemetrySnapshot.build(
            snap.topology,
            snap.collective[: len(snap.collective) // 2],
            snap.flows,
            snap.metrics,
            snap.nic_counters,
            snap.quarantined_entities,
        )
        small = {(e.src, e.dst, e.relation) for e in build_graph(reduced).edges}
        full = {(e.src, e.dst, e.relation) for e in two_app_run.graph.edges}
        assert small <= full

    def test_deterministic(self, nofault_run):
        again = build_graph(nofault_run.snapshot)
        assert again == nofault_run.graph

    def test_evidence_horizon_expires_old_bindings(self, nofault_run):
        # With a horizon shorter than the full range, runs_on edges must
        # come only from collective records inside the horizon.
        snap = nofault_run.snapshot
        t_min, t_max = snap.time_range
        horizon = (t_max - t_min) // 4
        recent = build_graph(snap, evidence_horizon_us=horizon)
        cutoff = t_max - horizon
        expected_gpus = {
            EntityId.gpu(r.src_gpu_uuid)
            for r in snap.collective
            if r.timestamp >= cutoff
        }
        runs_on = {
            e.dst for e in recent.edges if e.relation is Relation.RUNS_ON
        }
        assert runs_on == expected_gpus
        full = {
            e.dst for e in nofault_run.graph.edges if e.relation is Relation.RUNS_ON
        }
        assert runs_on <= full


class TestAppEntities:
    def test_identity_layer(self, nofault_run):
        app = EntityId.app(APP_A)
        assert app_entities(nofault_run.graph, app, Layer.APPLICATION) == {app}

    def test_unknown_app(self, nofault_run):
        with pytest.raises(UnknownAppError):
            app_entities(nofault_run.graph, EntityId.app("nope"), Layer.GPU)

    def test_switch_layer_includes_fabric_peers(self, tmp_path):
        # App on nodes 1-2 only (leaf1); switch query must still reach spines.
        run = make_run(tmp_path, [ring_workload(APP_A, hosts=range(1, 3), iterations=50)])
        switches = app_entities(run.graph, EntityId.app(APP_A), Layer.SWITCH)
        names = {s.key for s in switches}
        assert "leaf1" in names
        assert {"spine1", "spine2"} <= names

    def test_host_layer(self, nofault_run):
        hosts = app_entities(nofault_run.graph, EntityId.app(APP_A), Layer.HOST)
        assert {h.key for h in hosts} == {f"node{i}" for i in range(1, 9)}


class TestExport:
    def test_structured_round_trip(self, nofault_run):
        text = export_graph(nofault_run.graph, "structured")
        assert import_graph(text) == nofault_run.graph

    def test_empty_graph_documents(self, cluster8):
        snapshot = TelemetrySnapshot.build(cluster8, [], [], [], [])
        graph = build_graph(snapshot)
        dot = export_graph(graph, "dot")
        assert dot.startswith("digraph")
        assert import_graph(export_graph(graph, "structured")) == graph

    def test_dot_one_node_per_entity(self, nofault_run):
        dot = export_graph(nofault_run.graph, "dot")
        for node in nofault_run.graph.nodes:
            assert dot.count(f'"{node}" [shape=') == 1

    def test_app_subgraph_restricts_nodes(self, two_app_run):
        sub = app_subgraph(two_app_run.graph, EntityId.app(APP_A))
        assert EntityId.app(APP_B) not in sub.node_set()
        assert EntityId.app(APP_A) in sub.node_set()
        host_keys = {n.key for n in sub.nodes if n.layer is Layer.HOST}
        assert host_keys == {f"node{i}" for i in range(1, 5)}
