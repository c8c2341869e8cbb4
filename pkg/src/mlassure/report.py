"""Assurance report rendering: delimited tables plus figures.

Writes per-app tab-separated outputs (SLE windows, anomaly events, per-QP
volume breakdown) and the RCA document into a directory, and renders the
matching matplotlib figures next to them.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

from .anomaly import AnomalyEvent, detect_all
from .config import Config
from .depgraph import DependencyGraph
from .model import EntityId, Layer, TelemetrySnapshot
from .pathtrace import VolumeRow, volume_breakdown
from .rca import RcaReport, run_rca
from .sle import SleWindow, layer_sle


def _write_tsv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\t".join(header) + "\n")
        for row in rows:
            fh.write("\t".join("" if v is None else str(v) for v in row) + "\n")


def sle_rows(series_by_layer: dict[Layer, list[SleWindow]]) -> list[list]:
    rows = []
    for layer in sorted(series_by_layer, key=lambda l: l.value):
        for win in series_by_layer[layer]:
            rows.append(
                [
                    layer.value,
                    win.window_start,
                    win.window_us,
                    "" if win.compliance_pct is None else f"{win.compliance_pct:.6f}",
                    "no-data" if win.no_data else "ok",
                    str(win.entity) if win.entity else "",
                    ";".join(f"{m}x{c}" for m, c in win.breaching_metrics),
                ]
            )
    return rows


def anomaly_rows(events: list[AnomalyEvent]) -> list[list]:
    ordered = sorted(events, key=lambda e: (e.timestamp, e.entity.lex_key(), e.metric))
    return [
        [
            e.timestamp,
            str(e.entity),
            e.metric,
            f"{e.score:.4f}",
            e.direction,
            f"{e.baseline_median:.6g}",
            f"{e.baseline_dispersion:.6g}",
        ]
        for e in ordered
    ]


def volume_rows(rows: list[VolumeRow]) -> list[list]:
    return [
        [
            r.qp_id,
            r.src_rank,
            r.dst_rank,
            r.total_bytes,
            r.reverse_bytes,
            ";".join(f"{sw}={b}" for sw, b in r.per_hop),
        ]
        for r in rows
    ]


def _plot_sle(series_by_layer: dict[Layer, list[SleWindow]], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(9, 4.5))
    for layer in sorted(series_by_layer, key=lambda l: l.value):
        series = series_by_layer[layer]
        xs = [w.window_start / 1e6 for w in series]
        ys = [w.compliance_pct if w.compliance_pct is not None else float("nan") for w in series]
        if xs:
            t0 = xs[0]
            ax.step([x - t0 for x in xs], ys, where="post", label=layer.value)
    ax.set_xlabel("window start (s from range start)")
    ax.set_ylabel("compliance (%)")
    ax.set_ylim(-5, 105)
    ax.set_title("Service level expectation compliance by layer")
    ax.legend(loc="lower left")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _plot_anomalies(events: list[AnomalyEvent], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(9, 4.5))
    if events:
        t0 = min(e.timestamp for e in events) / 1e6
        by_entity: dict[str, list[AnomalyEvent]] = {}
        for e in events:
            by_entity.setdefault(str(e.entity), []).append(e)
        for name in sorted(by_entity):
            group = by_entity[name]
            xs = [e.timestamp / 1e6 - t0 for e in group]
            ys = [e.score for e in group]
            ax.scatter(xs, ys, label=f"{name} ({group[0].metric})", s=28)
        ax.set_yscale("log")
        if len(by_entity) <= 10:
            ax.legend(loc="upper right", fontsize=7)
    ax.set_xlabel("event time (s from first event)")
    ax.set_ylabel("anomaly score")
    ax.set_title("Anomaly events")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _plot_volume(rows: list[VolumeRow], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(9, max(3.0, 0.35 * len(rows) + 1.5)))
    labels = [f"qp {r.qp_id} ({r.src_rank}->{r.dst_rank})" for r in rows]
    values = [r.total_bytes for r in rows]
    ax.barh(range(len(rows)), values, color="#3572b0")
    ax.set_yticks(range(len(rows)))
    ax.set_yticklabels(labels, fontsize=7)
    ax.invert_yaxis()
    ax.set_xlabel("forward sampled bytes")
    ax.set_title("Per-queue-pair volume breakdown")
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def write_report(
    snapshot: TelemetrySnapshot,
    graph: DependencyGraph,
    app_id: str,
    out_dir,
    config: Config | None = None,
    time_range: tuple[int, int] | None = None,
) -> RcaReport:
    """Render the full per-app report into `out_dir`; returns the RCA result."""
    cfg = config or Config()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    app_ent = EntityId.app(app_id)

    series_by_layer: dict[Layer, list[SleWindow]] = {}
    for layer, profile in sorted(cfg.sle_profiles.items(), key=lambda kv: kv[0].value):
        series_by_layer[layer] = layer_sle(graph, snapshot, app_ent, layer, profile)
    _write_tsv(
        out / "sle_windows.tsv",
        ["layer", "window_start_us", "window_us", "compliance_pct", "status", "bounding_entity", "breaches"],
        sle_rows(series_by_layer),
    )
    _plot_sle(series_by_layer, out / "sle_compliance.png")

    events = detect_all(snapshot, cfg.anomaly)
    _write_tsv(
        out / "anomalies.tsv",
        ["timestamp_us", "entity", "metric", "score", "direction", "baseline_median", "baseline_dispersion"],
        anomaly_rows(events),
    )
    _plot_anomalies(events, out / "anomaly_scores.png")

    volumes = volume_breakdown(snapshot, app_id)
    _write_tsv(
        out / "volume_breakdown.tsv",
        ["qp", "src_rank", "dst_rank", "forward_bytes", "reverse_bytes", "per_hop"],
        volume_rows(volumes),
    )
    _plot_volume(volumes, out / "qp_volume.png")

    report = run_rca(
        graph,
        snapshot,
        app_id,
        time_range=time_range,
        params=cfg.anomaly,
        layer_weights=cfg.layer_weights,
        signatures=cfg.signatures,
    )
    with open(out / "rca_report.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    return report
