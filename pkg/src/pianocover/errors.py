"""Exception hierarchy shared by the toolkit."""


class PianoCoverError(Exception):
    """Base class for every error raised on bad input data."""


class MidiParseError(PianoCoverError):
    """Malformed standard MIDI file. ``offset`` is the byte position of the fault."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (at byte {offset})")
        self.offset = offset


class UnsupportedMeterError(PianoCoverError):
    pass


class EmptyInputError(PianoCoverError):
    pass


class SchemaError(PianoCoverError):
    """Lead-sheet JSON violates the schema. ``path`` is a JSON path like ``$.bars[2].chords``."""

    def __init__(self, message, path):
        super().__init__(f"{path}: {message}")
        self.path = path


class DecodeError(PianoCoverError):
    """Structural violation in a token sequence (strict decoding)."""

    def __init__(self, message, index):
        super().__init__(f"token {index}: {message}")
        self.index = index


class UndefinedMetricError(PianoCoverError):
    pass


class NumericError(Exception):
    """Training diverged (non-finite loss)."""
