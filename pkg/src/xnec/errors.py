"""Shared exception types."""


class XnecError(Exception):
    """Base class for all package errors."""


class CorruptVideoError(XnecError):
    """Video is undecodable or its frame timeline has gaps."""


class TelemetryError(XnecError):
    """Telemetry table is empty or malformed."""


class ValidationError(XnecError):
    """A record violates a declared invariant."""


class ManifestVersionError(XnecError):
    """Manifest schema version does not match the supported version."""
