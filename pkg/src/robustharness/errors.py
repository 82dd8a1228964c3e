"""Exception types shared across the harness.

The CLI maps these onto its exit-code contract: configuration and input
problems exit 2, endpoint availability/protocol problems exit 3.
"""


class HarnessError(Exception):
    """Base class for all harness-specific errors."""


class DecodeError(HarnessError):
    """Malformed image payload; message names the offending byte offset."""


class UnsupportedFormatError(DecodeError):
    """Well-formed image in a format/bit depth the codec does not accept."""


class DomainError(HarnessError):
    """Transform or search parameter outside its declared domain."""


class DatasetError(HarnessError):
    """Manifest or dataset layout violates the ingestion contract."""


class ConfigError(HarnessError):
    """Run configuration fails schema or consistency checks."""


class TransportError(HarnessError):
    """Classifier endpoint unreachable, timed out, or died mid-run."""


class ProtocolError(HarnessError):
    """Classifier endpoint answered, but the payload violates the protocol."""


class ReportError(HarnessError):
    """Report inputs are inconsistent (e.g. missing pair components)."""
