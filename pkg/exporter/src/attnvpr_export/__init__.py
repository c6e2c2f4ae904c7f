"""Feature exporter: extracts pre-aggregation tensors from released VPR
models into the attnvpr binary formats."""
from .errors import ExporterError, ImageDecodeFailure, ModelLoadFailure
from .export import ExportJob, export_features, read_reference_descriptor
from .models import MODEL_SPECS, load_model, wrap_model

__all__ = [
    "ExportJob",
    "ExporterError",
    "ImageDecodeFailure",
    "MODEL_SPECS",
    "ModelLoadFailure",
    "export_features",
    "load_model",
    "read_reference_descriptor",
    "wrap_model",
]

__version__ = "0.1.0"
