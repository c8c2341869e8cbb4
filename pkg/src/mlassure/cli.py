"""Command-line interface for the assurance engine.

Subcommands map to the pipeline: simulate -> ingest -> graph / sle / rca /
trace / report, plus `serve` for the local HTTP service. All outputs go to
stdout (structured) with diagnostics on stderr; failures exit non-zero with
a machine-readable category.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from .config import Config, load_config
from .depgraph import app_subgraph, build_graph, export_graph
from .errors import AssuranceError
from .harness import load_scenario, run_scenario
from .ingest import TOPOLOGY_FILE, ingest, load_snapshot, save_snapshot
from .model import EntityId, Layer, load_topology
from .rca import HttpExplanationClient, run_rca
from .sle import layer_sle, sle_series

CONFIG_ENV_VAR = "MLASSURE_CONFIG"

# Exit code per machine-readable error category.
EXIT_CODES = {
    "usage": 2,
    "io-error": 3,
    "malformed-input": 4,
    "topology-invalid": 5,
    "unknown-app": 6,
    "invalid-config": 7,
    "invalid-scenario": 8,
    "snapshot-format": 9,
    "internal": 10,
}


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


def _fail(category: str, message: str) -> int:
    print(f"error category={category}: {message}", file=sys.stderr)
    return EXIT_CODES.get(category, EXIT_CODES["internal"])


def _load_config(args) -> Config:
    path = args.config or os.environ.get(CONFIG_ENV_VAR)
    return load_config(path)


def _load_snapshot(path: str):
    if not Path(path).exists():
        raise CliError("io-error", f"snapshot file not found: {path}")
    return load_snapshot(path)


def _explanation_client(cfg: Config):
    if not cfg.explanation.enabled:
        return None
    return HttpExplanationClient(
        endpoint=cfg.explanation.endpoint,
        api_key=cfg.explanation.api_key,
        timeout_s=cfg.explanation.timeout_s,
        record_path=cfg.explanation.record_path or None,
    )


def _parse_time(value: str | None, default: int | None) -> int | None:
    if value is None:
        return default
    from .ingest import parse_timestamp

    try:
        return int(value)
    except ValueError:
        pass
    return parse_timestamp(value)


# ---------------------------------------------------------------------------
# Subcommand implementations
# ---------------------------------------------------------------------------


def cmd_ingest(args) -> int:
    topo_path = Path(args.topology)
    if not topo_path.exists():
        raise CliError("io-error", f"topology file not found: {topo_path}")
    data_dir = Path(args.data)
    if not data_dir.exists():
        raise CliError("io-error", f"data directory not found: {data_dir}")
    topology = load_topology(topo_path)
    snapshot, report = ingest([data_dir], topology)
    save_snapshot(snapshot, args.out, report)
    print(json.dumps(report.to_doc(), indent=2, sort_keys=True))
    return 0


def cmd_apps(args) -> int:
    snapshot, _ = _load_snapshot(args.snapshot)
    graph = build_graph(snapshot)
    print(json.dumps({"apps": graph.apps()}, sort_keys=True))
    return 0


def cmd_graph(args) -> int:
    snapshot, _ = _load_snapshot(args.snapshot)
    graph = build_graph(snapshot)
    if args.app:
        app = EntityId.app(args.app)
        if app not in graph.node_set():
            raise CliError("unknown-app", f"application {args.app!r} not in snapshot")
        graph = app_subgraph(graph, app)
    sys.stdout.write(export_graph(graph, args.format))
    return 0


def _layer_from_name(name: str) -> Layer:
    try:
        return Layer(name)
    except ValueError:
        raise CliError(
            "usage",
            f"unknown layer {name!r}; expected one of {[l.value for l in Layer]}",
        ) from None


def cmd_sle(args) -> int:
    cfg = _load_config(args)
    snapshot, _ = _load_snapshot(args.snapshot)
    layer = _layer_from_name(args.layer)
    profile = cfg.sle_profiles.get(layer)
    if profile is None:
        raise CliError("invalid-config", f"no SLE profile configured for layer {layer.value}")
    if args.app:
        graph = build_graph(snapshot)
        app = EntityId.app(args.app)
        if app not in graph.node_set():
            raise CliError("unknown-app", f"application {args.app!r} not in snapshot")
        windows = layer_sle(graph, snapshot, app, layer, profile)
    else:
        entities = sorted(
            (e for e in snapshot.by_entity if e.layer is layer),
            key=EntityId.sort_key,
        )
        windows = [w for entity in entities for w in sle_series(snapshot, entity, profile)]
    doc = {"layer": layer.value, "windows": [w.to_doc() for w in windows]}
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_rca(args) -> int:
    cfg = _load_config(args)
    snapshot, _ = _load_snapshot(args.snapshot)
    graph = build_graph(snapshot)
    app = EntityId.app(args.app)
    if app not in graph.node_set():
        raise CliError("unknown-app", f"application {args.app!r} not in snapshot")
    t_min, t_max = snapshot.time_range or (0, 0)
    time_range = (
        _parse_time(getattr(args, "from"), t_min),
        _parse_time(args.to, t_max),
    )
    report = run_rca(
        graph,
        snapshot,
        args.app,
        time_range=time_range,
        params=cfg.anomaly,
        client=_explanation_client(cfg),
        layer_weights=cfg.layer_weights,
        signatures=cfg.signatures,
    )
    sys.stdout.write(report.to_text())
    return 0


def cmd_trace(args) -> int:
    from .pathtrace import trace

    snapshot, _ = _load_snapshot(args.snapshot)
    graph = build_graph(snapshot)
    if EntityId.app(args.app) not in graph.node_set():
        raise CliError("unknown-app", f"application {args.app!r} not in snapshot")
    traces = trace(graph, snapshot, args.app, args.src_rank, args.dst_rank)
    doc = {
        "app": args.app,
        "src_rank": args.src_rank,
        "dst_rank": args.dst_rank,
        "traces": [t.to_doc() for t in traces],
    }
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_simulate(args) -> int:
    scenario_path = Path(args.scenario)
    if not scenario_path.exists():
        raise CliError("io-error", f"scenario file not found: {scenario_path}")
    scenario = load_scenario(scenario_path)
    _, truth = run_scenario(scenario, args.out)
    summary = {
        "out_dir": str(args.out),
        "topology_file": str(Path(args.out) / TOPOLOGY_FILE),
        "apps": sorted(truth.placements),
        "qps": len(truth.qps),
        "faults": len(truth.faults),
        "emitted": truth.emitted,
    }
    print(json.dumps(summary, indent=2, sort_keys=True))
    return 0


def cmd_report(args) -> int:
    from .report import write_report

    cfg = _load_config(args)
    snapshot, _ = _load_snapshot(args.snapshot)
    graph = build_graph(snapshot)
    app = EntityId.app(args.app)
    if app not in graph.node_set():
        raise CliError("unknown-app", f"application {args.app!r} not in snapshot")
    report = write_report(snapshot, graph, args.app, args.out, cfg)
    print(
        json.dumps(
            {
                "out_dir": str(args.out),
                "files": sorted(p.name for p in Path(args.out).iterdir()),
                "top_cause": report.ranked_causes[0].to_doc() if report.ranked_causes else None,
            },
            indent=2,
            sort_keys=True,
        )
    )
    return 0


def cmd_serve(args) -> int:
    from .service import serve

    cfg = _load_config(args)
    snapshot, _ = _load_snapshot(args.snapshot)
    port = args.port if args.port is not None else cfg.service_port
    print(f"serving snapshot on 127.0.0.1:{port}", file=sys.stderr)
    serve(snapshot, port, cfg)
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mlassure",
        description="Cross-layer assurance for distributed ML workloads",
    )
    parser.add_argument("--config", help=f"config file (or ${CONFIG_ENV_VAR})", default=None)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="parse telemetry sources into a snapshot archive")
    p.add_argument("--topology", required=True)
    p.add_argument("--data", required=True, help="directory of telemetry source files")
    p.add_argument("--out", required=True, help="snapshot archive to write")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("apps", help="list applications present in a snapshot")
    p.add_argument("--snapshot", required=True)
    p.set_defaults(func=cmd_apps)

    p = sub.add_parser("graph", help="export the dependency graph")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--app", default=None)
    p.add_argument("--format", choices=["dot", "structured"], default="structured")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("sle", help="compute SLE compliance windows")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--layer", required=True)
    p.add_argument("--app", default=None)
    p.set_defaults(func=cmd_sle)

    p = sub.add_parser("rca", help="root cause analysis for an application")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--app", required=True)
    p.add_argument("--from", dest="from", default=None, help="window start (us or ISO-8601)")
    p.add_argument("--to", default=None, help="window end (us or ISO-8601)")
    p.set_defaults(func=cmd_rca)

    p = sub.add_parser("trace", help="trace GPU-to-GPU paths for a rank pair")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--app", required=True)
    p.add_argument("--src-rank", type=int, required=True)
    p.add_argument("--dst-rank", type=int, required=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("simulate", help="generate a synthetic scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("report", help="write delimited outputs and figures for an app")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--app", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="serve a snapshot over HTTP")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--port", type=int, default=None)
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except CliError as exc:
        return _fail(exc.category, str(exc))
    except AssuranceError as exc:
        return _fail(exc.category, str(exc))
    except FileNotFoundError as exc:
        return _fail("io-error", str(exc))
    except OSError as exc:
        return _fail("io-error", str(exc))


if __name__ == "__main__":
    sys.exit(main())
