"""Exception hierarchy shared across the engine."""


class ProtodownError(Exception):
    """Base class for all engine errors."""


class IngestError(ProtodownError):
    """Unreadable or empty input file."""


class FormatError(IngestError):
    """Input file does not match the declared platform format."""


class DesignError(ProtodownError):
    """Invalid group design (bad regex, zero matches, ambiguous columns)."""


class AlignmentError(ProtodownError):
    """Protein table and matrix carry different identifier sets."""


class StateError(ProtodownError):
    """Operation called on data in the wrong pipeline state."""


class ConfigError(ProtodownError):
    """Invalid analysis parameters."""


class DataError(ProtodownError):
    """Data is degenerate for the requested computation."""


class TransportError(ProtodownError):
    """Remote call failed (timeout, HTTP error, malformed body)."""

    def __init__(self, message, kind="transport"):
        super().__init__(message)
        self.kind = kind
