"""Config document parsing: overrides, defaults, unknown-key rejection."""

import json

import pytest

from mlassure.config import Config, config_from_doc, load_config
from mlassure.errors import ConfigError
from mlassure.model import Layer


class TestDefaults:
    def test_no_file_gives_defaults(self):
        cfg = load_config(None)
        assert cfg.anomaly.threshold == 3.0
        assert cfg.anomaly.persistence == 3
        assert cfg.anomaly.baseline_window == 120
        assert Layer.GPU in cfg.sle_profiles
        assert cfg.layer_weights is None
        assert not cfg.explanation.enabled


class TestParsing:
    def test_full_document(self, tmp_path):
        doc = {
            "sle": {
                "Gpu": {
                    "window_s": 60,
                    "stride_s": 30,
                    "constituents": [
                        {"metric": "gpu.utilization", "lower": 10, "upper": 95},
                        {"metric": "gpu.temperature", "upper": 80},
                    ],
                }
            },
            "anomaly": {"baseline_window": 60, "threshold": 4.0, "persistence": 2},
            "rca": {"layer_weights": {"Nic": 0.95, "Gpu": 0.85}},
            "explanation": {"enabled": True, "endpoint": "http://127.0.0.1:1/x", "timeout_s": 2},
            "service": {"port": 9999},
        }
        path = tmp_path / "config.json"
        path.write_text(json.dumps(doc), encoding="utf-8")
        cfg = load_config(path)
        profile = cfg.sle_profiles[Layer.GPU]
        assert profile.window_us == 60_000_000
        assert profile.stride_us == 30_000_000
        assert len(profile.constituents) == 2
        assert cfg.anomaly.threshold == 4.0
        assert cfg.layer_weights[Layer.NIC] == 0.95
        assert cfg.explanation.enabled
        assert cfg.service_port == 9999

    def test_unknown_top_level_key(self):
        with pytest.raises(ConfigError) as err:
            config_from_doc({"slee": {}})
        assert "slee" in str(err.value)

    def test_unknown_nested_key_names_location(self):
        with pytest.raises(ConfigError) as err:
            config_from_doc(
                {"sle": {"Gpu": {"windw_s": 9, "constituents": [{"metric": "x", "upper": 1}]}}}
            )
        assert "sle.Gpu" in str(err.value)

    def test_unknown_layer_rejected(self):
        with pytest.raises(ConfigError):
            config_from_doc({"sle": {"Tensor": {"constituents": [{"metric": "x", "upper": 1}]}}})

    def test_constituent_without_bounds_rejected(self):
        with pytest.raises(ConfigError):
            config_from_doc({"sle": {"Gpu": {"constituents": [{"metric": "gpu.utilization"}]}}})

    def test_signature_overrides(self):
        from mlassure.rca import CauseKind

        cfg = config_from_doc(
            {"rca": {"signatures": {"nic.pause_frames.rate:high": "network_congestion"}}}
        )
        assert cfg.signatures == {
            ("nic.pause_frames.rate", "high"): CauseKind.NETWORK_CONGESTION
        }

    def test_bad_signature_key_rejected(self):
        with pytest.raises(ConfigError):
            config_from_doc({"rca": {"signatures": {"no-direction": "unknown"}}})
        with pytest.raises(ConfigError):
            config_from_doc({"rca": {"signatures": {"metric:high": "not_a_kind"}}})

    def test_enabled_explanation_requires_endpoint(self):
        with pytest.raises(ConfigError):
            config_from_doc({"explanation": {"enabled": True}})

    def test_bad_anomaly_parameters(self):
        with pytest.raises(ConfigError):
            config_from_doc({"anomaly": {"threshold": -1}})

    def test_invalid_json_reports_position(self, tmp_path):
        path = tmp_path / "config.json"
        path.write_text("{nope}", encoding="utf-8")
        with pytest.raises(ConfigError) as err:
            load_config(path)
        assert "line" in str(err.value)
