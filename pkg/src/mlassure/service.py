"""Read-only HTTP service over a loaded snapshot.

Emulates the analysis backend: every endpoint mirrors a CLI subcommand and
serves the same structured document, so the two surfaces stay in parity.
The snapshot is immutable, handlers share it freely across threads, and no
request mutates state.

Endpoints:
    GET /healthz
    GET /apps
    GET /apps/{id}/graph
    GET /apps/{id}/sle?layer=<Layer>
    GET /apps/{id}/rca?from=<us>&to=<us>
    GET /apps/{id}/paths?src=<rank>&dst=<rank>
"""

from __future__ import annotations

import json
import logging
import uuid
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

from .config import Config
from .depgraph import app_subgraph, build_graph, export_graph
from .errors import UnknownAppError
from .model import EntityId, Layer, TelemetrySnapshot
from .pathtrace import trace
from .rca import run_rca
from .sle import layer_sle

logger = logging.getLogger(__name__)


class _BadRequest(Exception):
    pass


class SnapshotService:
    """Request routing and document rendering, independent of the socket."""

    def __init__(self, snapshot: TelemetrySnapshot, config: Config | None = None):
        self.snapshot = snapshot
        self.config = config or Config()
        self.graph = build_graph(snapshot)

    def handle(self, path: str) -> tuple[int, str, str]:
        """Return (status, content_type, body) for a GET request path."""
        parsed = urlparse(path)
        parts = [p for p in parsed.path.split("/") if p]
        query = {k: v[-1] for k, v in parse_qs(parsed.query).items()}
        try:
            if parts == ["healthz"]:
                return 200, "text/plain", "ok"
            if parts == ["apps"]:
                return 200, "application/json", json.dumps(
                    {"apps": self.graph.apps()}, sort_keys=True
                )
            if len(parts) == 3 and parts[0] == "apps":
                app_id, action = parts[1], parts[2]
                if EntityId.app(app_id) not in self.graph.node_set():
                    return self._not_found(app_id)
                if action == "graph":
                    return 200, "application/json", export_graph(
                        app_subgraph(self.graph, EntityId.app(app_id)), "structured"
                    )
                if action == "sle":
                    return self._sle(app_id, query)
                if action == "rca":
                    return self._rca(app_id, query)
                if action == "paths":
                    return self._paths(app_id, query)
            return 404, "application/json", json.dumps(
                {"error": {"category": "not-found", "path": parsed.path}}
            )
        except _BadRequest as exc:
            return 400, "application/json", json.dumps(
                {"error": {"category": "bad-request", "message": str(exc)}}
            )
        except UnknownAppError as exc:
            return self._not_found(exc.app_id)
        except Exception:
            # Never leak internals: category plus a correlation id only.
            error_id = uuid.uuid4().hex[:12]
            logger.exception("internal error id=%s path=%s", error_id, path)
            return 500, "application/json", json.dumps(
                {"error": {"category": "internal", "id": error_id}}
            )

    def _not_found(self, app_id: str) -> tuple[int, str, str]:
        return 404, "application/json", json.dumps(
            {"error": {"category": "unknown-app", "app": app_id}}
        )

    def _sle(self, app_id: str, query: dict) -> tuple[int, str, str]:
        layer_name = query.get("layer")
        if not layer_name:
            raise _BadRequest("missing query parameter 'layer'")
        try:
            layer = Layer(layer_name)
        except ValueError:
            raise _BadRequest(f"unknown layer {layer_name!r}") from None
        profile = self.config.sle_profiles.get(layer)
        if profile is None:
            raise _BadRequest(f"no SLE profile configured for layer {layer.value}")
        windows = layer_sle(self.graph, self.snapshot, EntityId.app(app_id), layer, profile)
        doc = {"layer": layer.value, "windows": [w.to_doc() for w in windows]}
        return 200, "application/json", json.dumps(doc, indent=2, sort_keys=True)

    def _rca(self, app_id: str, query: dict) -> tuple[int, str, str]:
        t_min, t_max = self.snapshot.time_range or (0, 0)
        try:
            t_from = int(query.get("from", t_min))
            t_to = int(query.get("to", t_max))
        except ValueError:
            raise _BadRequest("'from' and 'to' must be integer microseconds") from None
        report = run_rca(
            self.graph,
            self.snapshot,
            app_id,
            time_range=(t_from, t_to),
            params=self.config.anomaly,
            layer_weights=self.config.layer_weights,
            signatures=self.config.signatures,
        )
        return 200, "application/json", report.to_text()

    def _paths(self, app_id: str, query: dict) -> tuple[int, str, str]:
        try:
            src = int(query["src"])
            dst = int(query["dst"])
        except KeyError as exc:
            raise _BadRequest(f"missing query parameter {exc.args[0]!r}") from None
        except ValueError:
            raise _BadRequest("'src' and 'dst' must be integer ranks") from None
        traces = trace(self.graph, self.snapshot, app_id, src, dst)
        doc = {
            "app": app_id,
            "src_rank": src,
            "dst_rank": dst,
            "traces": [t.to_doc() for t in traces],
        }
        return 200, "application/json", json.dumps(doc, indent=2, sort_keys=True)


class _Handler(BaseHTTPRequestHandler):
    service: SnapshotService  # injected by make_server

    def do_GET(self):  # noqa: N802 (http.server API)
        status, content_type, body = self.service.handle(self.path)
        payload = body.encode("utf-8")
        self.send_response(status)
        self.send_header("Content-Type", f"{content_type}; charset=utf-8")
        self.send_header("Content-Length", str(len(payload)))
        self.end_headers()
        self.wfile.write(payload)

    def log_message(self, fmt, *args):
        logger.debug("%s - %s", self.address_string(), fmt % args)


def make_server(
    snapshot: TelemetrySnapshot, port: int, config: Config | None = None
) -> ThreadingHTTPServer:
    service = SnapshotService(snapshot, config)
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer(("127.0.0.1", port), handler)


def serve(snapshot: TelemetrySnapshot, port: int, config: Config | None = None) -> None:
    server = make_server(snapshot, port, config)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
