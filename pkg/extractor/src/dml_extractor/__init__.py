"""Bridges trained deep metric learning models to the analysis toolkit.

Given a model checkpoint and an image folder, computes the embedding matrix
and, per image, a SmoothGrad stack of gradients of the loss-specific distance
to the black-image baseline, writing everything as tnsr-v1 files the analysis
toolkit reads directly.
"""

from .config import METRICS, ExtractorConfig, ExtractorError
from .distances import distance, distance_gradient
from .run import extract_embeddings, extract_gradient_stacks, load_model, write_meta
from .tensorio import read_tensor, write_tensor

__version__ = "0.1.0"

__all__ = [
    "METRICS",
    "ExtractorConfig",
    "ExtractorError",
    "distance",
    "distance_gradient",
    "extract_embeddings",
    "extract_gradient_stacks",
    "load_model",
    "read_tensor",
    "write_meta",
    "write_tensor",
    "__version__",
]
