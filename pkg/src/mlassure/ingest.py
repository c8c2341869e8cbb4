"""Parsers for the telemetry source formats and snapshot assembly.

One record per line for every source. Grammars (full ABNF-style rules in
docs/formats.md):

  collective log   <ISO-8601 ts, microseconds, Z> then space-separated k=v
                   fields in any order: app, op, bytes, src_rank, dst_rank,
                   channel, qp, host, gpu
  flow record      pipe-separated fixed order: switch|ingress|egress|ts_us|
                   src_ip|dst_ip|proto|dst_port|qp|packets|bytes  (qp "-"
                   when absent)
  metric sample    <ISO-8601 ts> metric=<name> value=<float> [label=value ...]
  nic counter      <ISO-8601 ts> host=<h> nic=<n> counter=<c> value=<int>

Parsers are stateless and reentrant; assembly is a single deterministic
merge (stable sort by timestamp, ties broken by source order).
"""

from __future__ import annotations

import ipaddress
import json
import re
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Sequence

from .errors import (
    MalformedLineError,
    QuarantinedLineError,
    RateDerivationError,
    SnapshotFormatError,
    TopologyInvalidError,
)
from .model import (
    ROCE_V2_PORT,
    CollectiveLogRecord,
    CollectiveOp,
    EntityId,
    FlowRecord,
    L4Protocol,
    Layer,
    MetricRegistry,
    MetricSample,
    NicCounter,
    NicCounterRecord,
    TelemetrySnapshot,
    Topology,
    default_registry,
    is_valid_gpu_key,
    nic_rate_metric,
    topology_from_doc,
    topology_to_doc,
    validate_topology,
)

SNAPSHOT_FORMAT_VERSION = 1

# Canonical source file names understood by ingest(). Any extra
# "*_metrics.rec" file is treated as more metric samples.
COLLECTIVE_FILE = "collective.log"
FLOW_FILE = "flows.rec"
GPU_METRICS_FILE = "gpu_metrics.rec"
APP_METRICS_FILE = "app_metrics.rec"
NIC_COUNTERS_FILE = "nic_counters.rec"
TOPOLOGY_FILE = "topology.json"


# ---------------------------------------------------------------------------
# Timestamps
# ---------------------------------------------------------------------------


def format_timestamp(timestamp_us: int) -> str:
    """Microseconds since epoch -> ISO-8601 with microseconds, UTC (Z)."""
    secs, frac = divmod(timestamp_us, 1_000_000)
    dt = datetime.fromtimestamp(secs, tz=timezone.utc)
    return f"{dt.strftime('%Y-%m-%dT%H:%M:%S')}.{frac:06d}Z"


_date_epoch_cache: dict[str, int] = {}


def parse_timestamp(token: str, offset: int = 0) -> int:
    """ISO-8601 with microseconds and trailing Z -> microseconds since epoch."""
    # Fixed-width fast path; strptime is too slow for bulk ingest.
    if (
        len(token) != 27
        or token[10] != "T"
        or token[19] != "."
        or not token.endswith("Z")
    ):
        raise MalformedLineError("timestamp must be ISO-8601 with microseconds and Z", offset, token)
    date_part, frac = token[:10], token[20:26]
    try:
        day_us = _date_epoch_cache[date_part]
    except KeyError:
        try:
            d = datetime.strptime(date_part, "%Y-%m-%d").replace(tzinfo=timezone.utc)
        except ValueError:
            raise MalformedLineError("unparseable timestamp date", offset, token) from None
        day_us = int(d.timestamp()) * 1_000_000
        _date_epoch_cache[date_part] = day_us
    try:
        hours = int(token[11:13])
        minutes = int(token[14:16])
        seconds = int(token[17:19])
        frac_us = int(frac)
    except ValueError:
        raise MalformedLineError("unparseable timestamp", offset, token) from None
    if token[13] != ":" or token[16] != ":" or hours > 23 or minutes > 59 or seconds > 60:
        raise MalformedLineError("unparseable timestamp", offset, token)
    return day_us + (hours * 3600 + minutes * 60 + seconds) * 1_000_000 + frac_us


# ---------------------------------------------------------------------------
# Field helpers
# ---------------------------------------------------------------------------

# Identifiers (app ids, hostnames, nic/switch/port ids) stay clear of the
# structural characters: whitespace, '=', '|', '/'.
_IDENT_RE = re.compile(r"^[A-Za-z0-9._-]+$")


def _require_ident(value: str, offset: int, what: str) -> str:
    if not _IDENT_RE.match(value):
        raise MalformedLineError(f"{what} must match [A-Za-z0-9._-]+", offset, value)
    return value


def _tokens_with_offsets(line: str) -> list[tuple[str, int]]:
    out = []
    offset = 0
    for token in line.split(" "):
        if token:
            out.append((token, offset))
        offset += len(token) + 1
    return out


def _kv_fields(tokens: list[tuple[str, int]]) -> dict[str, tuple[str, int]]:
    fields: dict[str, tuple[str, int]] = {}
    for token, offset in tokens:
        key, sep, value = token.partition("=")
        if not sep or not key:
            raise MalformedLineError("expected key=value field", offset, token)
        if key in fields:
            raise MalformedLineError(f"duplicate field {key!r}", offset, token)
        fields[key] = (value, offset)
    return fields


def _require(fields: dict[str, tuple[str, int]], key: str, line: str) -> tuple[str, int]:
    if key not in fields:
        raise MalformedLineError(f"missing field {key!r}", len(line), "")
    return fields[key]


def _parse_int(value: str, offset: int, what: str) -> int:
    try:
        return int(value)
    except ValueError:
        raise MalformedLineError(f"{what} must be an integer", offset, value) from None


# ---------------------------------------------------------------------------
# Collective log
# ---------------------------------------------------------------------------


def parse_collective_log(line: str) -> CollectiveLogRecord:
    tokens = _tokens_with_offsets(line)
    if not tokens:
        raise MalformedLineError("empty line", 0, "")
    ts_token, ts_offset = tokens[0]
    timestamp = parse_timestamp(ts_token, ts_offset)
    fields = _kv_fields(tokens[1:])

    app, app_offset = _require(fields, "app", line)
    _require_ident(app, app_offset, "app")
    op_text, op_offset = _require(fields, "op", line)
    try:
        op_kind = CollectiveOp(op_text)
    except ValueError:
        raise MalformedLineError("unknown collective op", op_offset, op_text) from None

    nbytes_text, nbytes_offset = _require(fields, "bytes", line)
    nbytes = _parse_int(nbytes_text, nbytes_offset, "bytes")
    if nbytes < 0:
        raise MalformedLineError("bytes must be non-negative", nbytes_offset, nbytes_text)
    src_text, src_offset = _require(fields, "src_rank", line)
    dst_text, dst_offset = _require(fields, "dst_rank", line)
    src_rank = _parse_int(src_text, src_offset, "src_rank")
    dst_rank = _parse_int(dst_text, dst_offset, "dst_rank")
    if src_rank == dst_rank:
        raise MalformedLineError("src_rank equals dst_rank", dst_offset, dst_text)
    channel_text, channel_offset = _require(fields, "channel", line)
    qp_text, qp_offset = _require(fields, "qp", line)
    qp_id = _parse_int(qp_text, qp_offset, "qp")
    if not 0 <= qp_id < (1 << 24):
        raise MalformedLineError("qp outside 24-bit range", qp_offset, qp_text)
    host, host_offset = _require(fields, "host", line)
    _require_ident(host, host_offset, "host")
    gpu, gpu_offset = _require(fields, "gpu", line)
    if not is_valid_gpu_key(gpu):
        raise MalformedLineError("gpu uuid is not GPU-<8+ hex> form", gpu_offset, gpu)

    extra = set(fields) - {"app", "op", "bytes", "src_rank", "dst_rank", "channel", "qp", "host", "gpu"}
    if extra:
        key = sorted(extra)[0]
        value, offset = fields[key]
        raise MalformedLineError("unexpected field", offset, f"{key}={value}")

    return CollectiveLogRecord(
        app_id=app,
        timestamp=timestamp,
        op_kind=op_kind,
        bytes=nbytes,
        src_rank=src_rank,
        dst_rank=dst_rank,
        src_gpu_uuid=gpu,
        hostname=host,
        channel=_parse_int(channel_text, channel_offset, "channel"),
        qp_id=qp_id,
    )


def serialize_collective_log(record: CollectiveLogRecord) -> str:
    return (
        f"{format_timestamp(record.timestamp)} app={record.app_id} op={record.op_kind.value}"
        f" bytes={record.bytes} src_rank={record.src_rank} dst_rank={record.dst_rank}"
        f" channel={record.channel} qp={record.qp_id} host={record.hostname}"
        f" gpu={record.src_gpu_uuid}"
    )


# ---------------------------------------------------------------------------
# Flow records
# ---------------------------------------------------------------------------


def parse_flow_record(line: str) -> FlowRecord:
    parts = line.split("|")
    if len(parts) != 11:
        raise MalformedLineError(f"expected 11 |-separated fields, got {len(parts)}", 0, line[:40])

    offsets = []
    pos = 0
    for part in parts:
        offsets.append(pos)
        pos += len(part) + 1

    switch_id, ingress, egress = parts[0], parts[1], parts[2]
    for idx, what in ((0, "switch"), (1, "ingress port"), (2, "egress port")):
        _require_ident(parts[idx], offsets[idx], what)
    if ingress == egress:
        raise MalformedLineError("ingress equals egress", offsets[2], egress)
    timestamp = _parse_int(parts[3], offsets[3], "timestamp")
    if timestamp <= 0:
        raise MalformedLineError("timestamp must be positive", offsets[3], parts[3])
    for idx in (4, 5):
        try:
            ipaddress.ip_address(parts[idx])
        except ValueError:
            raise MalformedLineError("bad IP address", offsets[idx], parts[idx]) from None
    try:
        proto = L4Protocol(parts[6])
    except ValueError:
        raise MalformedLineError("unknown L4 protocol", offsets[6], parts[6]) from None
    dst_port = _parse_int(parts[7], offsets[7], "dst_port")
    qp_id = None if parts[8] == "-" else _parse_int(parts[8], offsets[8], "qp")
    if dst_port == ROCE_V2_PORT and qp_id is None:
        raise QuarantinedLineError("missing-qp", f"RoCEv2 flow on {switch_id} lacks a qp id")
    packets = _parse_int(parts[9], offsets[9], "packets")
    nbytes = _parse_int(parts[10], offsets[10], "bytes")
    if packets < 0 or nbytes < 0:
        raise MalformedLineError("counts must be non-negative", offsets[9], parts[9])

    return FlowRecord(
        switch_id=switch_id,
        ingress_port=ingress,
        egress_port=egress,
        timestamp=timestamp,
        src_ip=parts[4],
        dst_ip=parts[5],
        l4_protocol=proto,
        dst_port=dst_port,
        qp_id=qp_id,
        sampled_packets=packets,
        sampled_bytes=nbytes,
    )


def serialize_flow_record(record: FlowRecord) -> str:
    qp = "-" if record.qp_id is None else str(record.qp_id)
    return "|".join(
        [
            record.switch_id,
            record.ingress_port,
            record.egress_port,
            str(record.timestamp),
            record.src_ip,
            record.dst_ip,
            record.l4_protocol.value,
            str(record.dst_port),
            qp,
            str(record.sampled_packets),
            str(record.sampled_bytes),
        ]
    )


# ---------------------------------------------------------------------------
# Metric samples and NIC counters
# ---------------------------------------------------------------------------

# Label precedence for resolving the owning entity of a metric sample.
_ENTITY_LABELS = ("gpu_uuid", "nic", "app", "switch", "hostname")


def resolve_metric_entity(labels: dict[str, str]) -> EntityId | None:
    if "gpu_uuid" in labels:
        return EntityId.gpu(labels["gpu_uuid"])
    if "nic" in labels and "hostname" in labels:
        return EntityId.nic(labels["hostname"], labels["nic"])
    if "app" in labels:
        return EntityId.app(labels["app"])
    if "switch" in labels and "port" in labels:
        return EntityId.switch_port(labels["switch"], labels["port"])
    if "switch" in labels:
        return EntityId.switch(labels["switch"])
    if "hostname" in labels:
        return EntityId.host(labels["hostname"])
    return None


def parse_metric_record(line: str, registry: MetricRegistry) -> MetricSample:
    tokens = _tokens_with_offsets(line)
    if not tokens:
        raise MalformedLineError("empty line", 0, "")
    ts_token, ts_offset = tokens[0]
    timestamp = parse_timestamp(ts_token, ts_offset)
    if timestamp <= 0:
        raise MalformedLineError("timestamp must be positive", ts_offset, ts_token)
    fields = _kv_fields(tokens[1:])

    metric, metric_offset = _require(fields, "metric", line)
    value_text, value_offset = _require(fields, "value", line)
    try:
        value = float(value_text)
    except ValueError:
        raise MalformedLineError("value must be a number", value_offset, value_text) from None
    if value != value or value in (float("inf"), float("-inf")):
        raise MalformedLineError("value must be finite", value_offset, value_text)

    if metric not in registry:
        raise QuarantinedLineError("unregistered-metric", f"metric {metric!r} is not registered")

    labels = {k: v for k, (v, _) in fields.items() if k not in ("metric", "value")}
    for key in ("hostname", "nic", "app", "switch", "port"):
        if key in labels:
            _require_ident(labels[key], fields[key][1], key)
    if "gpu_uuid" in labels and not is_valid_gpu_key(labels["gpu_uuid"]):
        raise MalformedLineError(
            "gpu_uuid label is not GPU-<8+ hex> form", fields["gpu_uuid"][1], labels["gpu_uuid"]
        )
    entity = resolve_metric_entity(labels)
    if entity is None:
        raise MalformedLineError("no entity-resolving label present", metric_offset, metric)

    return MetricSample(
        entity=entity,
        metric=metric,
        timestamp=timestamp,
        value=value,
        labels=tuple(sorted(labels.items())),
    )


def serialize_metric_record(sample: MetricSample) -> str:
    value = repr(sample.value)
    parts = [format_timestamp(sample.timestamp), f"metric={sample.metric}", f"value={value}"]
    parts.extend(f"{k}={v}" for k, v in sorted(sample.labels))
    return " ".join(parts)


def parse_nic_counter(line: str) -> NicCounterRecord:
    tokens = _tokens_with_offsets(line)
    if not tokens:
        raise MalformedLineError("empty line", 0, "")
    ts_token, ts_offset = tokens[0]
    timestamp = parse_timestamp(ts_token, ts_offset)
    fields = _kv_fields(tokens[1:])
    host, host_offset = _require(fields, "host", line)
    _require_ident(host, host_offset, "host")
    nic, nic_offset = _require(fields, "nic", line)
    _require_ident(nic, nic_offset, "nic")
    counter_text, counter_offset = _require(fields, "counter", line)
    try:
        counter = NicCounter(counter_text)
    except ValueError:
        raise MalformedLineError("unknown counter", counter_offset, counter_text) from None
    value_text, value_offset = _require(fields, "value", line)
    value = _parse_int(value_text, value_offset, "value")
    if value < 0:
        raise MalformedLineError("counter value must be non-negative", value_offset, value_text)
    return NicCounterRecord(hostname=host, nic_id=nic, timestamp=timestamp, counter=counter, value=value)


def serialize_nic_counter(record: NicCounterRecord) -> str:
    return (
        f"{format_timestamp(record.timestamp)} host={record.hostname} nic={record.nic_id}"
        f" counter={record.counter.value} value={record.value}"
    )


# ---------------------------------------------------------------------------
# Rate derivation
# ---------------------------------------------------------------------------


def derive_rates(series: Sequence[NicCounterRecord]) -> list[MetricSample]:
    """Turn one (nic, counter) cumulative series into per-second rates.

    Counter decreases are treated as resets: the new value counts from zero.
    The first sample yields no rate.
    """
    if not series:
        return []
    key = (series[0].hostname, series[0].nic_id, series[0].counter)
    rates: list[MetricSample] = []
    prev = series[0]
    for rec in series[1:]:
        if (rec.hostname, rec.nic_id, rec.counter) != key:
            raise RateDerivationError(
                f"mixed series: {key} vs {(rec.hostname, rec.nic_id, rec.counter)}"
            )
        dt_us = rec.timestamp - prev.timestamp
        if dt_us <= 0:
            raise RateDerivationError(
                f"non-positive interval between {prev.timestamp} and {rec.timestamp}"
                f" for {rec.hostname}/{rec.nic_id} {rec.counter.value}"
            )
        delta = rec.value - prev.value if rec.value >= prev.value else rec.value
        rate = delta / (dt_us / 1_000_000)
        rates.append(
            MetricSample(
                entity=EntityId.nic(rec.hostname, rec.nic_id),
                metric=nic_rate_metric(rec.counter),
                timestamp=rec.timestamp,
                value=rate,
                labels=(("hostname", rec.hostname), ("nic", rec.nic_id)),
            )
        )
        prev = rec
    return rates


# ---------------------------------------------------------------------------
# Ingest
# ---------------------------------------------------------------------------


@dataclass
class IngestReport:
    """Accounting for one ingest run: accepted + quarantined = lines offered."""

    records_accepted: dict[str, int] = field(default_factory=dict)
    records_quarantined: dict[str, int] = field(default_factory=dict)
    time_range: tuple[int, int] | None = None

    def accepted_total(self) -> int:
        return sum(self.records_accepted.values())

    def quarantined_total(self) -> int:
        return sum(self.records_quarantined.values())

    def to_doc(self) -> dict:
        return {
            "records_accepted": dict(sorted(self.records_accepted.items())),
            "records_quarantined": dict(sorted(self.records_quarantined.items())),
            "time_range": list(self.time_range) if self.time_range else None,
        }


def classify_source(path: Path) -> str | None:
    """Map a file name to its record kind; None means skip the file."""
    name = path.name
    if name == COLLECTIVE_FILE or name.endswith(".log"):
        return "collective"
    if name == FLOW_FILE or name.startswith("flow"):
        return "flow"
    if name == NIC_COUNTERS_FILE or name.startswith("nic_counter"):
        return "nic_counter"
    if name.endswith("_metrics.rec") or name.endswith(".metrics"):
        return "metric"
    return None


def _iter_lines(path: Path):
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            yield line


_KIND_ORDER = {"collective": 0, "flow": 1, "metric": 2, "nic_counter": 3}


def ingest(
    paths: Iterable[Path | str],
    topology: Topology,
    registry: MetricRegistry | None = None,
) -> tuple[TelemetrySnapshot, IngestReport]:
    """Parse every source file and assemble one TelemetrySnapshot.

    `paths` may mix files and directories; directories are scanned one level
    deep for known source names. Deterministic given identical inputs.
    """
    violations = validate_topology(topology)
    if violations:
        raise TopologyInvalidError("; ".join(violations))
    registry = registry or default_registry()

    files: list[tuple[str, Path]] = []
    for raw in paths:
        p = Path(raw)
        if p.is_dir():
            candidates = sorted(p.iterdir())
        elif p.exists():
            candidates = [p]
        else:
            raise FileNotFoundError(f"no such telemetry source: {p}")
        for cand in candidates:
            kind = classify_source(cand)
            if kind is not None and cand.is_file():
                files.append((kind, cand))
    files.sort(key=lambda kf: (_KIND_ORDER[kf[0]], str(kf[1])))

    report = IngestReport()
    accepted = report.records_accepted
    quarantined = report.records_quarantined

    collective: list[CollectiveLogRecord] = []
    flows: list[FlowRecord] = []
    metrics: list[MetricSample] = []
    nic_counters: list[NicCounterRecord] = []
    unknown_entities: set[str] = set()

    host_by_name = topology.host_by_name()
    nic_infos = topology.nic_entities()
    switch_ports = {
        f"{s.switch_id}/{p}" for s in topology.switches for p in s.ports
    }
    switch_ids = set(topology.switch_by_id())
    gpu_hosts = {g.uuid: h.hostname for h in topology.hosts for g in h.gpus}
    qp_owner: dict[int, str] = {}

    def note_entity(entity: EntityId):
        known = False
        if entity.layer is Layer.GPU:
            known = entity.key in gpu_hosts
        elif entity.layer is Layer.HOST:
            known = entity.key in host_by_name
        elif entity.layer is Layer.NIC:
            known = entity.key in nic_infos
        elif entity.layer is Layer.SWITCH_PORT:
            known = entity.key in switch_ports
        elif entity.layer is Layer.SWITCH:
            known = entity.key in switch_ids
        elif entity.layer is Layer.APPLICATION:
            known = True  # apps exist only through telemetry
        if not known:
            unknown_entities.add(str(entity))

    for kind, path in files:
        for line in _iter_lines(path):
            try:
                if kind == "collective":
                    rec = parse_collective_log(line)
                    owner = qp_owner.setdefault(rec.qp_id, rec.app_id)
                    if owner != rec.app_id:
                        raise QuarantinedLineError(
                            "qp-app-conflict",
                            f"qp {rec.qp_id} already bound to app {owner!r}",
                        )
                    collective.append(rec)
                    note_entity(EntityId.gpu(rec.src_gpu_uuid))
                    note_entity(EntityId.host(rec.hostname))
                elif kind == "flow":
                    frec = parse_flow_record(line)
                    if frec.switch_id not in switch_ids:
                        raise QuarantinedLineError(
                            "unknown-entity", f"unknown switch {frec.switch_id!r}"
                        )
                    for port in (frec.ingress_port, frec.egress_port):
                        if f"{frec.switch_id}/{port}" not in switch_ports:
                            raise QuarantinedLineError(
                                "unknown-entity",
                                f"port {port!r} not on switch {frec.switch_id!r}",
                            )
                    flows.append(frec)
                elif kind == "metric":
                    sample = parse_metric_record(line, registry)
                    metrics.append(sample)
                    note_entity(sample.entity)
                else:
                    nrec = parse_nic_counter(line)
                    nic_counters.append(nrec)
                    note_entity(EntityId.nic(nrec.hostname, nrec.nic_id))
            except QuarantinedLineError as exc:
                quarantined[exc.reason] = quarantined.get(exc.reason, 0) + 1
                continue
            except MalformedLineError:
                quarantined["malformed"] = quarantined.get("malformed", 0) + 1
                continue
            accepted[kind] = accepted.get(kind, 0) + 1

    # NIC counter series must be strictly increasing in time per key;
    # duplicates of a timestamp are quarantined, not silently merged.
    nic_counters.sort(key=lambda r: (r.hostname, r.nic_id, r.counter.value, r.timestamp))
    deduped: list[NicCounterRecord] = []
    last_key = None
    last_ts = -1
    dropped = 0
    for rec in nic_counters:
        key = (rec.hostname, rec.nic_id, rec.counter)
        if key == last_key and rec.timestamp <= last_ts:
            dropped += 1
            continue
        deduped.append(rec)
        last_key, last_ts = key, rec.timestamp
    if dropped:
        quarantined["non-monotonic-timestamp"] = (
            quarantined.get("non-monotonic-timestamp", 0) + dropped
        )
        accepted["nic_counter"] = accepted.get("nic_counter", 0) - dropped

    # Derived rate samples (events/second) join the metric store.
    by_key: dict[tuple[str, str, NicCounter], list[NicCounterRecord]] = {}
    for rec in deduped:
        by_key.setdefault((rec.hostname, rec.nic_id, rec.counter), []).append(rec)
    for key in sorted(by_key, key=lambda k: (k[0], k[1], k[2].value)):
        metrics.extend(derive_rates(by_key[key]))

    snapshot = TelemetrySnapshot.build(
        topology=topology,
        collective=collective,
        flows=flows,
        metrics=metrics,
        nic_counters=deduped,
        quarantined_entities=unknown_entities,
    )
    report.time_range = snapshot.time_range
    return snapshot, report


# ---------------------------------------------------------------------------
# Snapshot archive
# ---------------------------------------------------------------------------


def snapshot_to_doc(snapshot: TelemetrySnapshot, report: IngestReport | None = None) -> dict:
    """Single-document archive layout; records stored as canonical lines."""
    return {
        "format_version": SNAPSHOT_FORMAT_VERSION,
        "topology": topology_to_doc(snapshot.topology),
        "collective": [serialize_collective_log(r) for r in snapshot.collective],
        "flows": [serialize_flow_record(r) for r in snapshot.flows],
        "metrics": [serialize_metric_record(r) for r in snapshot.metrics],
        "nic_counters": [serialize_nic_counter(r) for r in snapshot.nic_counters],
        "quarantined_entities": sorted(snapshot.quarantined_entities),
        "report": report.to_doc() if report else None,
    }


def save_snapshot(snapshot: TelemetrySnapshot, path, report: IngestReport | None = None) -> None:
    doc = snapshot_to_doc(snapshot, report)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_snapshot(path, registry: MetricRegistry | None = None) -> tuple[TelemetrySnapshot, IngestReport]:
    registry = registry or default_registry()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise SnapshotFormatError(f"cannot read snapshot {path}: {exc}") from exc
    if doc.get("format_version") != SNAPSHOT_FORMAT_VERSION:
        raise SnapshotFormatError(f"unsupported snapshot format {doc.get('format_version')!r}")
    try:
        topology = topology_from_doc(doc["topology"])
        # Rate metrics are already materialized in the archive, so NIC
        # counters reload as records only; no re-derivation happens here.
        snapshot = TelemetrySnapshot.build(
            topology=topology,
            collective=[parse_collective_log(l) for l in doc["collective"]],
            flows=[parse_flow_record(l) for l in doc["flows"]],
            metrics=[parse_metric_record(l, registry) for l in doc["metrics"]],
            nic_counters=[parse_nic_counter(l) for l in doc["nic_counters"]],
            quarantined_entities=doc.get("quarantined_entities", []),
        )
    except (KeyError, MalformedLineError, QuarantinedLineError, ValueError) as exc:
        raise SnapshotFormatError(f"bad snapshot document: {exc}") from exc
    report = IngestReport()
    rep_doc = doc.get("report") or {}
    report.records_accepted = dict(rep_doc.get("records_accepted", {}))
    report.records_quarantined = dict(rep_doc.get("records_quarantined", {}))
    tr = rep_doc.get("time_range")
    report.time_range = tuple(tr) if tr else snapshot.time_range
    return snapshot, report
