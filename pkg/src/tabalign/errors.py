"""Exception hierarchy shared across the package."""


class TabalignError(Exception):
    """Base class for all package errors."""


class DataError(TabalignError):
    """Malformed input data, schema violations, or encoding failures."""


class ConfigError(TabalignError):
    """Invalid configuration or missing credentials (CLI exit code 2)."""


class TransportError(TabalignError):
    """LLM endpoint unreachable after retries."""


class GenerationError(TabalignError):
    """Synthesis produced no usable rows or the endpoint returned junk."""


class StageError(TabalignError):
    """A pipeline stage failed; message carries the stage tag (exit code 3)."""
