class ExportError(Exception):
    """Fatal export problem (bad job, unreadable manifest, no usable clips)."""


class ModelError(ExportError):
    """Unknown or unloadable model identifier."""


class SifbFormatError(ExportError):
    """A feature file violates the binary layout."""
