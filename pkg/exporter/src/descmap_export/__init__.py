"""Export dense descriptor maps from pretrained local-feature networks.

Writes float32 .npy tensors with .json geometry sidecars in the layout the
keypoint-detection toolkit consumes; the two packages share only that file
contract.
"""

from .errors import ExportError, ImageError, UsageError, WeightsError
from .export import (crop_to_stride, export_hpatches, export_image,
                     load_image, load_network, resolve_weights)
from .models import MODELS, ModelSpec, build_model, run_model

__version__ = "0.1.0"

__all__ = [
    "ExportError",
    "ImageError",
    "UsageError",
    "WeightsError",
    "MODELS",
    "ModelSpec",
    "build_model",
    "run_model",
    "crop_to_stride",
    "export_hpatches",
    "export_image",
    "load_image",
    "load_network",
    "resolve_weights",
    "__version__",
]
