"""Failure classes for the exporter; each maps to a distinct CLI exit code."""


class ExportError(Exception):
    """Base class for exporter failures."""


class UsageError(ExportError):
    """Unknown model name or invalid flag combination."""


class ImageError(ExportError):
    """Input image is missing, unreadable, or below the minimum size."""


class WeightsError(ExportError):
    """Pretrained weights are unavailable or do not fit the architecture."""
