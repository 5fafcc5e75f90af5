"""Differentiable loss-specific distances between embedding vectors.

For similarity-oriented metrics the differentiated scalar is the similarity
itself; downstream saliency post-processing takes absolute values, so the
sign convention does not alter maps.
"""

from __future__ import annotations

import torch

from .config import ExtractorError


def distance(metric: str, a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Scalar d(a, b) for 1-D embedding tensors, differentiable w.r.t. ``a``."""
    if metric == "euclidean":
        return torch.linalg.vector_norm(a - b)
    if metric == "squared_euclidean":
        d = a - b
        return torch.dot(d, d)
    if metric == "cosine_similarity":
        return torch.dot(a, b) / (torch.linalg.vector_norm(a) * torch.linalg.vector_norm(b))
    if metric == "dot_product_similarity":
        return torch.dot(a, b)
    if metric == "snr_distance":
        d = a - b
        return torch.var(d, correction=0) / torch.var(a, correction=0)
    raise ExtractorError(f"unknown metric {metric!r}")


def distance_gradient(
    model, image: torch.Tensor, x_base: torch.Tensor, metric: str
) -> torch.Tensor:
    """Gradient of d(f(image), x_base) w.r.t. the image pixels.

    ``image`` is [C, H, W] in model input space; the baseline embedding is a
    constant. Returns the gradient as [H, W, C].
    """
    x = image.detach().clone().unsqueeze(0).requires_grad_(True)
    emb = model(x)[0]
    d = distance(metric, emb, x_base.detach())
    (grad,) = torch.autograd.grad(d, x)
    return grad[0].permute(1, 2, 0).contiguous()
