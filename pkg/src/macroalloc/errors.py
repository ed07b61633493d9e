"""Exception taxonomy shared across the package.

Error kinds map onto the CLI exit-code contract: usage (1), data
validation (2), gateway (3), audit (4).
"""


class MacroallocError(Exception):
    """Base class for all package errors."""

    kind = "data"


class ParseError(MacroallocError):
    """A malformed input row. Carries the 1-based line number when known."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


class ValidationError(MacroallocError):
    """Input parsed but violates a domain invariant."""


class RangeError(MacroallocError):
    """A date query outside the loaded data range."""


class BoundaryError(MacroallocError):
    """A calendar query with no predecessor (or successor) member."""


class DataGapError(MacroallocError):
    """A bar expected for (ticker, date) is missing."""


class InsufficientDataError(MacroallocError):
    """Fewer observations than an operation requires."""


class GatewayError(MacroallocError):
    """LLM gateway failure (transport, configuration, or empty reply)."""

    kind = "gateway"


class TransportError(GatewayError):
    """Network failure after the retry budget is exhausted."""


class CassetteMissError(GatewayError):
    """Replay-mode request whose hash is not in the cassette."""


class ExtractionError(MacroallocError):
    """No structured value could be recovered from model output."""

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text


class ReflectionFailure(MacroallocError):
    """The ranking step failed for a day; the day degrades to a hold."""


class UndefinedSharpeError(MacroallocError):
    """Sharpe requested on a return series with zero standard deviation."""


class SectorMapError(MacroallocError):
    """A ticker with no GICS sector mapping reached prompt construction."""


class ConfigError(MacroallocError):
    """Run configuration is incomplete or inconsistent."""

    kind = "usage"
