"""Exception hierarchy shared across the package."""


class SimtError(Exception):
    pass


class PreconditionError(SimtError, ValueError):
    """An operation was called with inputs outside its contract."""


class TransientError(SimtError):
    """A backend call failed in a way that may succeed on retry."""


class ReconciliationError(SimtError):
    """A re-transcription is shorter than the already committed prefix."""


class GenerationOverflow(SimtError):
    """The token budget ran out before a word boundary or end of turn."""


class BackgroundError(SimtError, ValueError):
    pass


class BackgroundParseError(BackgroundError):
    def __init__(self, msg: str, lineno: int = 0, colno: int = 0):
        super().__init__(f"{msg} (line {lineno}, column {colno})")
        self.lineno = lineno
        self.colno = colno


class BackgroundSchemaError(BackgroundError):
    pass


class ExtractionError(BackgroundError):
    """No structured document could be located in a model response."""


class UndefinedMetricError(SimtError, ValueError):
    pass


class ManifestError(SimtError, ValueError):
    pass


class AudioFormatError(SimtError, ValueError):
    pass


class RecordFormatError(SimtError, ValueError):
    def __init__(self, msg: str, lineno: int):
        super().__init__(f"line {lineno}: {msg}")
        self.lineno = lineno
