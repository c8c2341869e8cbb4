"""Exception types shared across the assurance pipeline."""

from __future__ import annotations


class AssuranceError(Exception):
    """Base class for all errors raised by this package."""

    category = "internal"


class MalformedLineError(AssuranceError):
    """A telemetry line could not be parsed.

    Carries the byte offset of the first unparseable token within the line
    and the token text itself.
    """

    category = "malformed-input"

    def __init__(self, message: str, offset: int, token: str):
        super().__init__(f"{message} (offset {offset}, token {token!r})")
        self.offset = offset
        self.token = token


class QuarantinedLineError(AssuranceError):
    """A line parsed but violates an ingest policy; it is counted, not kept."""

    category = "quarantined"

    def __init__(self, reason: str, message: str = ""):
        super().__init__(message or reason)
        self.reason = reason


class RegistryConflictError(AssuranceError):
    category = "registry-conflict"


class TopologyInvalidError(AssuranceError):
    category = "topology-invalid"


class SnapshotFormatError(AssuranceError):
    category = "snapshot-format"


class RateDerivationError(AssuranceError):
    category = "rate-derivation"


class UnknownAppError(AssuranceError):
    category = "unknown-app"

    def __init__(self, app_id: str):
        super().__init__(f"unknown application {app_id!r}")
        self.app_id = app_id


class TooShortSeriesError(AssuranceError):
    category = "too-short-series"


class InconsistentFlowsError(AssuranceError):
    category = "inconsistent-flows"


class NoSymptomsError(AssuranceError):
    category = "no-symptoms"


class ConfigError(AssuranceError):
    """Configuration document rejected; message names the offending key path."""

    category = "invalid-config"


class ScenarioError(AssuranceError):
    category = "invalid-scenario"
