"""Exception hierarchy shared by every tsesim module."""


class TseSimError(Exception):
    """Base class for data errors (CLI exit code 2)."""


class WavFormatError(TseSimError):
    """Malformed RIFF/WAVE container."""


class UnsupportedFormatError(WavFormatError):
    """Well-formed WAV whose sample encoding is not PCM16 or float32."""


class DegenerateInputError(TseSimError, ValueError):
    """Input for which the requested quantity is undefined (e.g. SNR of silence)."""


class CatalogError(TseSimError):
    pass


class ShardError(TseSimError):
    pass


class DistinctSpeakerUnavailableError(TseSimError):
    """Raised when the interferer rejection loop exhausts its retry cap."""


class ConfigError(TseSimError):
    pass
