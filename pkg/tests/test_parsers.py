"""Line parsers: spec'd examples, error reporting, and round-trip properties."""

import ipaddress
from random import Random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mlassure.errors import MalformedLineError, QuarantinedLineError, RateDerivationError
from mlassure.ingest import (
    format_timestamp,
    parse_collective_log,
    parse_flow_record,
    parse_metric_record,
    parse_nic_counter,
    parse_timestamp,
    derive_rates,
    serialize_collective_log,
    serialize_flow_record,
    serialize_metric_record,
    serialize_nic_counter,
)
from mlassure.model import (
    CollectiveLogRecord,
    CollectiveOp,
    EntityId,
    FlowRecord,
    L4Protocol,
    NicCounter,
    NicCounterRecord,
    MetricSample,
    default_registry,
)

REGISTRY = default_registry()

SAMPLE_LINE = (
    "2025-01-15T20:31:35.039720Z app=845b5514 op=AllReduce bytes=8 src_rank=0"
    " dst_rank=1 channel=0 qp=18669 host=node3 gpu=GPU-9f2a44d1"
)


class TestTimestamp:
    def test_round_trip(self):
        ts = parse_timestamp("2025-01-15T20:31:35.039720Z")
        assert format_timestamp(ts) == "2025-01-15T20:31:35.039720Z"

    def test_rejects_missing_fraction(self):
        with pytest.raises(MalformedLineError):
            parse_timestamp("2025-01-15T20:31:35Z")

    def test_rejects_no_zulu(self):
        with pytest.raises(MalformedLineError):
            parse_timestamp("2025-01-15T20:31:35.039720")


class TestCollectiveLog:
    def test_sample_line(self):
        rec = parse_collective_log(SAMPLE_LINE)
        assert rec.op_kind is CollectiveOp.ALL_REDUCE
        assert rec.qp_id == 18669
        assert rec.app_id == "845b5514"
        assert rec.bytes == 8
        assert rec.hostname == "node3"
        assert rec.src_gpu_uuid == "GPU-9f2a44d1"

    def test_fields_in_any_order(self):
        shuffled = (
            "2025-01-15T20:31:35.039720Z gpu=GPU-9f2a44d1 qp=18669 host=node3"
            " channel=0 dst_rank=1 src_rank=0 bytes=8 op=AllReduce app=845b5514"
        )
        assert parse_collective_log(shuffled) == parse_collective_log(SAMPLE_LINE)

    def test_equal_ranks_rejected(self):
        line = SAMPLE_LINE.replace("dst_rank=1", "dst_rank=0")
        with pytest.raises(MalformedLineError):
            parse_collective_log(line)

    def test_unknown_op_names_token(self):
        line = SAMPLE_LINE.replace("op=AllReduce", "op=AllToAll")
        with pytest.raises(MalformedLineError) as err:
            parse_collective_log(line)
        assert err.value.token == "AllToAll"

    def test_offset_points_at_bad_token(self):
        line = SAMPLE_LINE.replace("bytes=8", "bytes=eight")
        with pytest.raises(MalformedLineError) as err:
            parse_collective_log(line)
        assert line[err.value.offset :].startswith("eight") or line[
            err.value.offset :
        ].startswith("bytes=eight")

    def test_serializer_round_trip(self):
        rec = parse_collective_log(SAMPLE_LINE)
        assert serialize_collective_log(rec) == SAMPLE_LINE
        assert parse_collective_log(serialize_collective_log(rec)) == rec


class TestFlowRecord:
    ROCE_LINE = "leaf1|p1|u1|1736971200000000|10.0.0.1|10.0.0.2|UDP|4791|18669|256|1048576"

    def test_roce_line(self):
        rec = parse_flow_record(self.ROCE_LINE)
        assert rec.qp_id == 18669
        assert rec.dst_port == 4791
        assert rec.sampled_bytes == 1048576

    def test_missing_qp_is_quarantine(self):
        line = self.ROCE_LINE.replace("|18669|", "|-|")
        with pytest.raises(QuarantinedLineError) as err:
            parse_flow_record(line)
        assert err.value.reason == "missing-qp"

    def test_non_roce_without_qp_accepted(self):
        line = "leaf1|p1|u1|1736971200000000|10.0.0.1|10.0.0.2|UDP|53|-|10|900"
        rec = parse_flow_record(line)
        assert rec.qp_id is None
        assert rec.dst_port == 53

    def test_same_ports_rejected(self):
        line = "leaf1|p1|p1|1736971200000000|10.0.0.1|10.0.0.2|UDP|4791|7|1|1"
        with pytest.raises(MalformedLineError):
            parse_flow_record(line)

    def test_round_trip(self):
        rec = parse_flow_record(self.ROCE_LINE)
        assert serialize_flow_record(rec) == self.ROCE_LINE


class TestMetricRecord:
    GPU_LINE = (
        "2025-01-15T20:31:35.000000Z metric=gpu.utilization value=91.0"
        " gpu_uuid=GPU-9f2a44d1 hostname=node3"
    )

    def test_gpu_sample_bound_to_gpu_entity(self):
        sample = parse_metric_record(self.GPU_LINE, REGISTRY)
        assert sample.entity == EntityId.gpu("GPU-9f2a44d1")
        assert sample.value == 91.0
        assert sample.label_map() == {"gpu_uuid": "GPU-9f2a44d1", "hostname": "node3"}

    def test_unregistered_metric_quarantined(self):
        line = self.GPU_LINE.replace("gpu.utilization", "gpu.flux_capacitance")
        with pytest.raises(QuarantinedLineError) as err:
            parse_metric_record(line, REGISTRY)
        assert err.value.reason == "unregistered-metric"

    def test_app_sample_bound_to_app_entity(self):
        line = "2025-01-15T20:31:35.000000Z metric=app.iteration_rate value=10.5 app=845b5514"
        sample = parse_metric_record(line, REGISTRY)
        assert sample.entity == EntityId.app("845b5514")

    def test_switch_port_entity(self):
        line = (
            "2025-01-15T20:31:35.000000Z metric=switch.queue_depth value=1200.0"
            " port=d1 switch=spine1"
        )
        sample = parse_metric_record(line, REGISTRY)
        assert sample.entity == EntityId.switch_port("spine1", "d1")

    def test_non_finite_value_rejected(self):
        line = self.GPU_LINE.replace("value=91.0", "value=nan")
        with pytest.raises(MalformedLineError):
            parse_metric_record(line, REGISTRY)


class TestNicCounter:
    LINE = "2025-01-15T20:31:35.000000Z host=node3 nic=eth0 counter=cnp_received value=0"

    def test_zero_value_accepted(self):
        rec = parse_nic_counter(self.LINE)
        assert rec.counter is NicCounter.CNP_RECEIVED
        assert rec.value == 0

    def test_unknown_counter_rejected(self):
        line = self.LINE.replace("cnp_received", "bogus_counter")
        with pytest.raises(MalformedLineError) as err:
            parse_nic_counter(line)
        assert err.value.token == "bogus_counter"

    def test_round_trip(self):
        assert serialize_nic_counter(parse_nic_counter(self.LINE)) == self.LINE


class TestDeriveRates:
    @staticmethod
    def series(values, spacing_s=10):
        return [
            NicCounterRecord(
                hostname="node1",
                nic_id="eth0",
                timestamp=1_000_000_000 + i * spacing_s * 1_000_000,
                counter=NicCounter.CNP_RECEIVED,
                value=v,
            )
            for i, v in enumerate(values)
        ]

    def test_simple_rate(self):
        rates = derive_rates(self.series([100, 160]))
        assert [r.value for r in rates] == [6.0]
        assert rates[0].metric == "nic.cnp_received.rate"

    def test_reset_rule(self):
        rates = derive_rates(self.series([100, 160, 20]))
        assert [r.value for r in rates] == [6.0, 2.0]

    def test_constant_series(self):
        rates = derive_rates(self.series([5, 5, 5]))
        assert [r.value for r in rates] == [0.0, 0.0]

    def test_first_sample_yields_no_rate(self):
        assert derive_rates(self.series([42])) == []

    def test_non_positive_dt_rejected(self):
        recs = self.series([1, 2])
        bad = [recs[0], NicCounterRecord("node1", "eth0", recs[0].timestamp, NicCounter.CNP_RECEIVED, 2)]
        with pytest.raises(RateDerivationError):
            derive_rates(bad)

    def test_rates_never_negative_property(self):
        rng = Random(5)
        values = [rng.randrange(0, 10_000) for _ in range(200)]
        rates = derive_rates(self.series(values, spacing_s=1))
        assert all(r.value >= 0 for r in rates)


# ---------------------------------------------------------------------------
# Round-trip properties (hypothesis)
# ---------------------------------------------------------------------------

idents = st.text("abcdefghijklmnopqrstuvwxyz0123456789._-", min_size=1, max_size=12).filter(
    lambda s: s.strip("._-") != "" or s.isalnum()
)
hexes = st.text("0123456789abcdef", min_size=4, max_size=12)
timestamps = st.integers(min_value=1, max_value=4_000_000_000_000_000)
gpu_uuids = st.text("0123456789abcdef", min_size=8, max_size=16).map(lambda s: "GPU-" + s)
finite_floats = st.floats(allow_nan=False, allow_infinity=False, width=64)


@st.composite
def collective_records(draw):
    src = draw(st.integers(min_value=0, max_value=63))
    dst = draw(st.integers(min_value=0, max_value=63).filter(lambda d: d != src))
    return CollectiveLogRecord(
        app_id=draw(hexes),
        timestamp=draw(timestamps),
        op_kind=draw(st.sampled_from(list(CollectiveOp))),
        bytes=draw(st.integers(min_value=0, max_value=1 << 48)),
        src_rank=src,
        dst_rank=dst,
        src_gpu_uuid=draw(gpu_uuids),
        hostname=draw(idents),
        channel=draw(st.integers(min_value=0, max_value=31)),
        qp_id=draw(st.integers(min_value=0, max_value=(1 << 24) - 1)),
    )


@st.composite
def flow_records(draw):
    ingress = draw(idents)
    egress = draw(idents.filter(lambda p: p != ingress))
    roce = draw(st.booleans())
    qp = draw(st.integers(min_value=0, max_value=(1 << 24) - 1)) if roce else draw(
        st.none() | st.integers(min_value=0, max_value=(1 << 24) - 1)
    )
    return FlowRecord(
        switch_id=draw(idents),
        ingress_port=ingress,
        egress_port=egress,
        timestamp=draw(timestamps),
        src_ip=str(ipaddress.IPv4Address(draw(st.integers(0, 2**32 - 1)))),
        dst_ip=str(ipaddress.IPv4Address(draw(st.integers(0, 2**32 - 1)))),
        l4_protocol=draw(st.sampled_from(list(L4Protocol))),
        dst_port=4791 if roce else draw(st.integers(0, 65535).filter(lambda p: p != 4791)),
        qp_id=qp,
        sampled_packets=draw(st.integers(0, 1 << 32)),
        sampled_bytes=draw(st.integers(0, 1 << 48)),
    )


@st.composite
def metric_samples(draw):
    metric = draw(st.sampled_from(REGISTRY.names()))
    kind = draw(st.sampled_from(["gpu", "nic", "app", "switch_port", "host"]))
    labels: dict[str, str] = {}
    if kind == "gpu":
        labels["gpu_uuid"] = draw(gpu_uuids)
        labels["hostname"] = draw(idents)
    elif kind == "nic":
        labels["hostname"] = draw(idents)
        labels["nic"] = draw(idents)
    elif kind == "app":
        labels["app"] = draw(hexes)
    elif kind == "switch_port":
        labels["switch"] = draw(idents)
        labels["port"] = draw(idents)
    else:
        labels["hostname"] = draw(idents)
    from mlassure.ingest import resolve_metric_entity

    return MetricSample(
        entity=resolve_metric_entity(labels),
        metric=metric,
        timestamp=draw(timestamps),
        value=draw(finite_floats),
        labels=tuple(sorted(labels.items())),
    )


@st.composite
def nic_counter_records(draw):
    return NicCounterRecord(
        hostname=draw(idents),
        nic_id=draw(idents),
        timestamp=draw(timestamps),
        counter=draw(st.sampled_from(list(NicCounter))),
        value=draw(st.integers(0, 1 << 52)),
    )


class TestRoundTripProperties:
    @settings(max_examples=300)
    @given(collective_records())
    def test_collective(self, rec):
        assert parse_collective_log(serialize_collective_log(rec)) == rec

    @settings(max_examples=300)
    @given(flow_records())
    def test_flow(self, rec):
        assert parse_flow_record(serialize_flow_record(rec)) == rec

    @settings(max_examples=300)
    @given(metric_samples())
    def test_metric(self, rec):
        assert parse_metric_record(serialize_metric_record(rec), REGISTRY) == rec

    @settings(max_examples=300)
    @given(nic_counter_records())
    def test_nic_counter(self, rec):
        assert parse_nic_counter(serialize_nic_counter(rec)) == rec
