"""Exporter error hierarchy."""


class ExporterError(Exception):
    """Base class for exporter failures."""


class ModelLoadFailure(ExporterError):
    """The requested model could not be constructed or its weights fetched."""


class ImageDecodeFailure(ExporterError):
    """An input image is missing or cannot be decoded."""
