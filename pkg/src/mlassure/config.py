"""Configuration document for profiles, detector parameters, and the service.

A single JSON document; unknown keys are rejected with their location so a
typo never silently disables a setting.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

from .anomaly import DetectorParams
from .errors import ConfigError
from .model import Layer
from .rca import CauseKind
from .sle import SleBound, SleProfile, default_profiles

DEFAULT_SERVICE_PORT = 8321


@dataclass
class ExplanationSettings:
    enabled: bool = False
    endpoint: str = ""
    api_key: str = ""
    timeout_s: float = 5.0
    record_path: str = ""


@dataclass
class Config:
    sle_profiles: dict[Layer, SleProfile] = field(default_factory=default_profiles)
    anomaly: DetectorParams = field(default_factory=DetectorParams)
    layer_weights: dict[Layer, float] | None = None
    signatures: dict[tuple[str, str], CauseKind] | None = None
    explanation: ExplanationSettings = field(default_factory=ExplanationSettings)
    service_port: int = DEFAULT_SERVICE_PORT


def _reject_unknown(doc: dict, allowed: set[str], location: str):
    for key in doc:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} at {location}")


def _parse_profile(layer_name: str, doc: dict) -> SleProfile:
    try:
        layer = Layer(layer_name)
    except ValueError:
        raise ConfigError(f"unknown layer {layer_name!r} at sle") from None
    location = f"sle.{layer_name}"
    _reject_unknown(doc, {"window_s", "stride_s", "constituents"}, location)
    constituents = []
    for i, cdoc in enumerate(doc.get("constituents", [])):
        closer = f"{location}.constituents[{i}]"
        _reject_unknown(cdoc, {"metric", "lower", "upper"}, closer)
        if "metric" not in cdoc:
            raise ConfigError(f"missing 'metric' at {closer}")
        constituents.append(
            SleBound(cdoc["metric"], lower=cdoc.get("lower"), upper=cdoc.get("upper"))
        )
    if not constituents:
        raise ConfigError(f"profile at {location} needs at least one constituent")
    return SleProfile(
        layer=layer,
        constituents=tuple(constituents),
        window_us=int(doc.get("window_s", 300) * 1_000_000),
        stride_us=int(doc.get("stride_s", 60) * 1_000_000),
    )


def config_from_doc(doc: dict) -> Config:
    _reject_unknown(doc, {"sle", "anomaly", "rca", "explanation", "service"}, "top level")
    cfg = Config()

    for layer_name, pdoc in doc.get("sle", {}).items():
        profile = _parse_profile(layer_name, pdoc)
        cfg.sle_profiles[profile.layer] = profile

    adoc = doc.get("anomaly", {})
    _reject_unknown(adoc, {"baseline_window", "threshold", "persistence", "min_history"}, "anomaly")
    try:
        cfg.anomaly = DetectorParams(
            baseline_window=int(adoc.get("baseline_window", DetectorParams.baseline_window)),
            threshold=float(adoc.get("threshold", DetectorParams.threshold)),
            persistence=int(adoc.get("persistence", DetectorParams.persistence)),
            min_history=int(adoc.get("min_history", DetectorParams.min_history)),
        )
    except ValueError as exc:
        raise ConfigError(f"bad anomaly parameters: {exc}") from exc

    rdoc = doc.get("rca", {})
    _reject_unknown(rdoc, {"layer_weights", "signatures"}, "rca")
    if "layer_weights" in rdoc:
        weights = {}
        for layer_name, w in rdoc["layer_weights"].items():
            try:
                weights[Layer(layer_name)] = float(w)
            except ValueError:
                raise ConfigError(f"unknown layer {layer_name!r} at rca.layer_weights") from None
        cfg.layer_weights = weights
    if "signatures" in rdoc:
        # Keys are "<metric>:<direction>", values are cause kind names.
        signatures = {}
        for key, kind_name in rdoc["signatures"].items():
            metric, sep, direction = key.rpartition(":")
            if not sep or direction not in ("high", "low"):
                raise ConfigError(
                    f"signature key {key!r} at rca.signatures must be '<metric>:high|low'"
                )
            try:
                signatures[(metric, direction)] = CauseKind(kind_name)
            except ValueError:
                raise ConfigError(
                    f"unknown cause kind {kind_name!r} at rca.signatures[{key!r}]"
                ) from None
        cfg.signatures = signatures

    edoc = doc.get("explanation", {})
    _reject_unknown(edoc, {"enabled", "endpoint", "api_key", "timeout_s", "record_path"}, "explanation")
    cfg.explanation = ExplanationSettings(
        enabled=bool(edoc.get("enabled", False)),
        endpoint=str(edoc.get("endpoint", "")),
        api_key=str(edoc.get("api_key", "")),
        timeout_s=float(edoc.get("timeout_s", 5.0)),
        record_path=str(edoc.get("record_path", "")),
    )
    if cfg.explanation.enabled and not cfg.explanation.endpoint:
        raise ConfigError("explanation.enabled requires explanation.endpoint")

    sdoc = doc.get("service", {})
    _reject_unknown(sdoc, {"port"}, "service")
    cfg.service_port = int(sdoc.get("port", DEFAULT_SERVICE_PORT))
    return cfg


def load_config(path: str | Path | None) -> Config:
    if path is None:
        return Config()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: line {exc.lineno} col {exc.colno}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config document must be a JSON object")
    return config_from_doc(doc)
