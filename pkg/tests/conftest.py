"""Shared fixtures: canned harness runs ingested into snapshots."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import pytest

from mlassure.depgraph import DependencyGraph, build_graph
from mlassure.harness import (
    ClusterSpec,
    FaultKind,
    FaultSpec,
    GroundTruth,
    SimOptions,
    WorkloadSpec,
    generate_cluster,
    simulate,
    write_files,
)
from mlassure.ingest import IngestReport, ingest
from mlassure.model import EntityId, TelemetrySnapshot, Topology

APP_A = "845b5514"
APP_B = "1f2e3d4c"

START = SimOptions().start_time_us


@dataclass
class SimRun:
    topology: Topology
    snapshot: TelemetrySnapshot
    report: IngestReport
    truth: GroundTruth
    out_dir: Path
    graph: DependencyGraph


def make_run(tmp_dir: Path, workloads, faults=(), seed=7, options=None, cluster=None) -> SimRun:
    spec = cluster or ClusterSpec(hosts=8, gpus_per_host=1, leaves=2, spines=2)
    topology = generate_cluster(spec, seed)
    files, truth = simulate(topology, list(workloads), list(faults), seed, options)
    write_files(files, topology, truth, tmp_dir)
    snapshot, report = ingest([tmp_dir], topology)
    return SimRun(
        topology=topology,
        snapshot=snapshot,
        report=report,
        truth=truth,
        out_dir=tmp_dir,
        graph=build_graph(snapshot),
    )


def ring_workload(app_id=APP_A, hosts=range(1, 9), iterations=600, channels=1) -> WorkloadSpec:
    return WorkloadSpec(
        app_id=app_id,
        placement=tuple((f"node{i}", 0) for i in hosts),
        iterations=iterations,
        bytes_per_op=1 << 20,
        channels=channels,
    )


@pytest.fixture(scope="session")
def cluster8() -> Topology:
    return generate_cluster(ClusterSpec(hosts=8, gpus_per_host=1, leaves=2, spines=2), seed=7)


@pytest.fixture(scope="session")
def nofault_run(tmp_path_factory) -> SimRun:
    return make_run(tmp_path_factory.mktemp("nofault"), [ring_workload()])


@pytest.fixture(scope="session")
def congestion_run(tmp_path_factory) -> SimRun:
    fault = FaultSpec(
        FaultKind.LINK_CONGESTION,
        EntityId.switch_port("spine1", "d1"),
        START + 20_000_000,
        START + 40_000_000,
    )
    return make_run(tmp_path_factory.mktemp("congestion"), [ring_workload()], [fault])


@pytest.fixture(scope="session")
def throttle_run(tmp_path_factory) -> SimRun:
    topology = generate_cluster(ClusterSpec(hosts=8, gpus_per_host=1, leaves=2, spines=2), seed=7)
    gpu = topology.hosts[2].gpus[0].uuid  # node3
    fault = FaultSpec(
        FaultKind.GPU_THROTTLE,
        EntityId.gpu(gpu),
        START + 20_000_000,
        START + 40_000_000,
    )
    return make_run(tmp_path_factory.mktemp("throttle"), [ring_workload()], [fault])


@pytest.fixture(scope="session")
def two_app_run(tmp_path_factory) -> SimRun:
    """Two disjoint placements: app A on nodes 1-4 (leaf1), B on 5-8 (leaf2)."""
    return make_run(
        tmp_path_factory.mktemp("two_app"),
        [
            ring_workload(APP_A, hosts=range(1, 5), iterations=300),
            ring_workload(APP_B, hosts=range(5, 9), iterations=300),
        ],
    )
