"""Symptom collection, cause localization, remediation, and narratives."""

import pytest

from mlassure.anomaly import AnomalyEvent
from mlassure.errors import NoSymptomsError, UnknownAppError
from mlassure.model import EntityId, Layer, TelemetrySnapshot
from mlassure.rca import (
    CauseKind,
    Evidence,
    HttpExplanationClient,
    RcaReport,
    TemplateExplanationClient,
    collect_symptoms,
    explain,
    localize,
    remediation_for,
    run_rca,
)

from conftest import APP_A, APP_B, make_run, ring_workload


def event(entity, metric, score, direction="high", ts=1_736_971_220_000_000):
    return AnomalyEvent(
        entity=entity,
        metric=metric,
        timestamp=ts,
        score=score,
        direction=direction,
        baseline_median=0.0,
        baseline_dispersion=1.0,
        window=(ts, ts + 1_000_000),
    )


SYMPTOM = Evidence(EntityId.app(APP_A), "app.iteration_rate", 20.0, "low")


class TestCollectSymptoms:
    def test_healthy_run_empty(self, nofault_run):
        symptoms = collect_symptoms(
            nofault_run.graph, nofault_run.snapshot, APP_A, nofault_run.snapshot.time_range
        )
        assert symptoms == []

    def test_congestion_run_iteration_rate_low(self, congestion_run):
        symptoms = collect_symptoms(
            congestion_run.graph,
            congestion_run.snapshot,
            APP_A,
            congestion_run.snapshot.time_range,
        )
        assert symptoms
        assert symptoms[0].metric == "app.iteration_rate"
        assert symptoms[0].direction == "low"

    def test_window_outside_range_empty(self, congestion_run):
        t_min, _ = congestion_run.snapshot.time_range
        symptoms = collect_symptoms(
            congestion_run.graph,
            congestion_run.snapshot,
            APP_A,
            (t_min - 10_000_000, t_min - 1),
        )
        assert symptoms == []

    def test_unknown_app(self, nofault_run):
        with pytest.raises(UnknownAppError):
            collect_symptoms(nofault_run.graph, nofault_run.snapshot, "nope", (0, 1))


class TestLocalize:
    def setup_method(self):
        self.port = EntityId.switch_port("spine1", "d1")
        self.nic = EntityId.nic("node3", "eth0")
        self.gpu = EntityId.gpu("GPU-9f2a44d1")
        self.reachable = {self.port, self.nic, self.gpu, EntityId.switch("spine1")}

    def test_requires_symptoms(self, nofault_run):
        with pytest.raises(NoSymptomsError):
            localize(nofault_run.graph, [], [], APP_A, self.reachable)

    def test_congestion_located_at_port(self, nofault_run):
        anomalies = [
            event(self.port, "switch.queue_depth", 150.0),
            event(self.nic, "nic.cnp_received.rate", 5e11),
        ]
        causes = localize(nofault_run.graph, anomalies, [SYMPTOM], APP_A, self.reachable)
        assert causes[0].cause_kind is CauseKind.NETWORK_CONGESTION
        assert causes[0].located_at == self.port
        metrics = {e.metric for e in causes[0].evidence}
        assert metrics == {"switch.queue_depth", "nic.cnp_received.rate"}

    def test_thermal_throttle_needs_both_signals(self, nofault_run):
        both = [
            event(self.gpu, "gpu.temperature", 40.0, "high"),
            event(self.gpu, "gpu.utilization", 35.0, "low"),
        ]
        causes = localize(nofault_run.graph, both, [SYMPTOM], APP_A, self.reachable)
        assert causes[0].cause_kind is CauseKind.GPU_THERMAL_THROTTLE
        assert causes[0].located_at == self.gpu

        temp_only = [event(self.gpu, "gpu.temperature", 40.0, "high")]
        causes = localize(nofault_run.graph, temp_only, [SYMPTOM], APP_A, self.reachable)
        assert causes[0].cause_kind is not CauseKind.GPU_THERMAL_THROTTLE

    def test_packet_loss_at_nic(self, nofault_run):
        anomalies = [
            event(self.nic, "nic.out_of_sequence.rate", 90.0),
            event(self.nic, "nic.retransmits.rate", 80.0),
        ]
        causes = localize(nofault_run.graph, anomalies, [SYMPTOM], APP_A, self.reachable)
        assert causes[0].cause_kind is CauseKind.PACKET_LOSS
        assert causes[0].located_at == self.nic

    def test_saturation_from_sustained_high_utilization(self, nofault_run):
        anomalies = [event(self.gpu, "gpu.utilization", 25.0, "high")]
        causes = localize(nofault_run.graph, anomalies, [SYMPTOM], APP_A, self.reachable)
        assert causes[0].cause_kind is CauseKind.GPU_SATURATION

    def test_zero_reachable_anomalies_unknown_fallback(self, nofault_run):
        causes = localize(nofault_run.graph, [], [SYMPTOM], APP_A, self.reachable)
        assert len(causes) == 1
        assert causes[0].cause_kind is CauseKind.UNKNOWN
        assert causes[0].located_at == EntityId.app(APP_A)
        assert causes[0].score == 0.0

    def test_unreachable_anomalies_ignored(self, nofault_run):
        far = EntityId.nic("node9", "eth9")
        anomalies = [event(far, "nic.retransmits.rate", 500.0)]
        causes = localize(nofault_run.graph, anomalies, [SYMPTOM], APP_A, self.reachable)
        assert causes[0].cause_kind is CauseKind.UNKNOWN

    def test_signature_override_changes_kind(self, nofault_run):
        anomalies = [event(self.nic, "nic.pause_frames.rate", 60.0)]
        default = localize(nofault_run.graph, anomalies, [SYMPTOM], APP_A, self.reachable)
        assert default[0].cause_kind is CauseKind.NIC_FAULT
        overridden = localize(
            nofault_run.graph,
            anomalies,
            [SYMPTOM],
            APP_A,
            self.reachable,
            signatures={("nic.pause_frames.rate", "high"): CauseKind.NETWORK_CONGESTION},
        )
        assert overridden[0].cause_kind is CauseKind.NETWORK_CONGESTION

    def test_layer_weights_scale_scores(self, nofault_run):
        anomalies = [
            event(self.port, "switch.queue_depth", 100.0),
            event(self.gpu, "gpu.utilization", 100.0, "high"),
        ]
        causes = localize(nofault_run.graph, anomalies, [SYMPTOM], APP_A, self.reachable)
        by_kind = {c.cause_kind: c for c in causes}
        assert by_kind[CauseKind.NETWORK_CONGESTION].score == pytest.approx(100.0)
        assert by_kind[CauseKind.GPU_SATURATION].score == pytest.approx(90.0)
        assert causes[0].cause_kind is CauseKind.NETWORK_CONGESTION


class TestRemediation:
    def test_gpu_saturation_includes_workload_distribution(self):
        assert "optimize workload distribution" in remediation_for(CauseKind.GPU_SATURATION)

    def test_congestion_mentions_load_balancing(self):
        steps = remediation_for(CauseKind.NETWORK_CONGESTION)
        assert any("load balancing" in s for s in steps)

    def test_unknown_generic_triage(self):
        assert remediation_for(CauseKind.UNKNOWN)


class _FailingClient:
    name = "external"

    def explain(self, symptoms, ranked_causes):
        raise TimeoutError("simulated external timeout")


class _CannedClient:
    name = "external"

    def explain(self, symptoms, ranked_causes):
        return "an external narrative"


class TestExplain:
    def test_template_names_cause_and_location(self, congestion_run):
        report = run_rca(congestion_run.graph, congestion_run.snapshot, APP_A)
        fault_port = congestion_run.truth.faults[0]["target"]
        assert "network congestion" in report.narrative
        assert fault_port in report.narrative
        assert report.narrative_source == "template"

    def test_empty_causes_narrative(self):
        report = RcaReport(APP_A, (0, 1), [], [])
        explain(report, TemplateExplanationClient())
        assert "no root cause identified" in report.narrative

    def test_external_failure_falls_back_flagged(self):
        report = RcaReport(APP_A, (0, 1), [SYMPTOM], [])
        explain(report, _FailingClient())
        assert report.explanation_fallback
        assert report.narrative_source == "template"
        assert report.narrative

    def test_external_success_used(self):
        report = RcaReport(APP_A, (0, 1), [SYMPTOM], [])
        explain(report, _CannedClient())
        assert report.narrative == "an external narrative"
        assert report.narrative_source == "external"
        assert not report.explanation_fallback

    def test_replay_fixture_served_in_order(self):
        from pathlib import Path

        from mlassure.rca import ReplayExplanationClient

        fixture = Path(__file__).parent / "data" / "explanation_replay.jsonl"
        replay = ReplayExplanationClient(fixture)
        first = replay.explain([SYMPTOM], [])
        second = replay.explain([SYMPTOM], [])
        assert "congested" in first
        assert "thermally throttling" in second
        with pytest.raises(IndexError):
            replay.explain([SYMPTOM], [])

    def test_replay_client_round_trip(self, tmp_path):
        import http.server
        import json
        import threading

        class Handler(http.server.BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers["Content-Length"])
                self.rfile.read(length)
                body = json.dumps({"narrative": "llm says: congestion"}).encode()
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(body)))
                self.end_headers()
                self.wfile.write(body)

            def log_message(self, *args):
                pass

        server = http.server.HTTPServer(("127.0.0.1", 0), Handler)
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            record = tmp_path / "replay.jsonl"
            client = HttpExplanationClient(
                endpoint=f"http://127.0.0.1:{server.server_port}/explain",
                record_path=record,
            )
            narrative = client.explain([SYMPTOM], [])
            assert narrative == "llm says: congestion"
            from mlassure.rca import ReplayExplanationClient

            replay = ReplayExplanationClient(record)
            assert replay.explain([SYMPTOM], []) == "llm says: congestion"
        finally:
            server.shutdown()
            server.server_close()


class TestRunRca:
    def test_congestion_end_to_end(self, congestion_run):
        report = run_rca(congestion_run.graph, congestion_run.snapshot, APP_A)
        fault = congestion_run.truth.faults[0]
        top = report.ranked_causes[0]
        assert str(top.located_at) == fault["target"]
        assert top.cause_kind.value == fault["expected_cause_kind"]
        assert report.symptoms

    def test_throttle_end_to_end(self, throttle_run):
        report = run_rca(throttle_run.graph, throttle_run.snapshot, APP_A)
        fault = throttle_run.truth.faults[0]
        top = report.ranked_causes[0]
        assert str(top.located_at) == fault["target"]
        assert top.cause_kind is CauseKind.GPU_THERMAL_THROTTLE

    def test_no_fault_no_causes(self, nofault_run):
        report = run_rca(nofault_run.graph, nofault_run.snapshot, APP_A)
        assert report.symptoms == []
        assert report.ranked_causes == []

    def test_combined_faults_both_kinds_present(self, tmp_path):
        from mlassure.harness import ClusterSpec, FaultKind, FaultSpec, generate_cluster
        from conftest import START

        seed = 7
        topology = generate_cluster(ClusterSpec(hosts=8, gpus_per_host=1, leaves=2, spines=2), seed)
        gpu6 = topology.hosts[5].gpus[0].uuid
        run = make_run(
            tmp_path,
            [ring_workload()],
            faults=[
                FaultSpec(
                    FaultKind.LINK_CONGESTION,
                    EntityId.switch_port("spine1", "d1"),
                    START + 20_000_000,
                    START + 40_000_000,
                ),
                FaultSpec(
                    FaultKind.GPU_THROTTLE,
                    EntityId.gpu(gpu6),
                    START + 20_000_000,
                    START + 40_000_000,
                ),
            ],
            seed=seed,
        )
        report = run_rca(run.graph, run.snapshot, APP_A)
        kinds = {c.cause_kind for c in report.ranked_causes}
        assert CauseKind.NETWORK_CONGESTION in kinds
        assert CauseKind.GPU_THERMAL_THROTTLE in kinds

    def test_byte_deterministic(self, congestion_run):
        a = run_rca(congestion_run.graph, congestion_run.snapshot, APP_A).to_text()
        b = run_rca(congestion_run.graph, congestion_run.snapshot, APP_A).to_text()
        assert a.encode() == b.encode()

    def test_unrelated_app_removal_is_invisible(self, two_app_run, tmp_path):
        # Two disjoint apps, fault on app A's side only.
        from mlassure.harness import FaultKind, FaultSpec
        from conftest import START

        fault = FaultSpec(
            FaultKind.GPU_THROTTLE,
            EntityId.gpu(two_app_run.truth.placements[APP_A][1]["gpu"]),
            START + 10_000_000,
            START + 25_000_000,
        )
        run = make_run(
            tmp_path,
            [
                ring_workload(APP_A, hosts=range(1, 5), iterations=300),
                ring_workload(APP_B, hosts=range(5, 9), iterations=300),
            ],
            faults=[fault],
        )
        with_b = run_rca(run.graph, run.snapshot, APP_A).to_text()

        snap = run.snapshot
        stripped = TelemetrySnapshot.build(
            snap.topology,
            [r for r in snap.collective if r.app_id != APP_B],
            snap.flows,
            [
                m
                for m in snap.metrics
                if not (m.entity.layer is Layer.APPLICATION and m.entity.key == APP_B)
            ],
            snap.nic_counters,
            snap.quarantined_entities,
        )
        from mlassure.depgraph import build_graph

        without_b = run_rca(build_graph(stripped), stripped, APP_A).to_text()
        assert with_b == without_b

    def test_evidence_located_within_reachable(self, congestion_run):
        from mlassure.rca import _reachable_entities

        report = run_rca(congestion_run.graph, congestion_run.snapshot, APP_A)
        reachable = _reachable_entities(congestion_run.graph, congestion_run.snapshot, APP_A)
        for cause in report.ranked_causes:
            assert cause.located_at in reachable
            for ev in cause.evidence:
                assert ev.entity in reachable
