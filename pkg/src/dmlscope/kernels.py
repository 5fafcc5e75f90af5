"""Backend selection for the blocked scoring kernels.

Two interchangeable backends fill score blocks: a compiled Cython extension
(_score_kernels) and a pure-numpy fallback (_score_numpy). The compiled one
is used when importable; DMLSCOPE_KERNEL=numpy|cython|auto overrides. Both
return float32 scores oriented so smaller is closer (similarities negated);
euclidean and squared euclidean share the squared kernel since ordering and
ties coincide. Score values are for ordering only; pairwise_score is the
authority on metric values.
"""

from __future__ import annotations

import os

import numpy as np

from . import _score_numpy
from .data import MetricKind
from .errors import ToolkitError

try:
    from . import _score_kernels
except ImportError:  # toolchain without a C compiler
    _score_kernels = None

METRIC_IDS = {
    MetricKind.EUCLIDEAN: 0,
    MetricKind.SQUARED_EUCLIDEAN: 0,
    MetricKind.COSINE_SIMILARITY: 1,
    MetricKind.DOT_PRODUCT_SIMILARITY: 2,
    MetricKind.SNR_DISTANCE: 3,
}

_AUX_CHUNK = 4096


def available_backends() -> tuple:
    return ("cython", "numpy") if _score_kernels is not None else ("numpy",)


def default_backend() -> str:
    """Backend chosen at import time, subject to the DMLSCOPE_KERNEL variable."""
    env = os.environ.get("DMLSCOPE_KERNEL", "auto").strip().lower()
    if env in ("", "auto"):
        return "cython" if _score_kernels is not None else "numpy"
    if env in ("cython", "numpy"):
        return env
    raise ToolkitError(f"DMLSCOPE_KERNEL must be auto, cython or numpy, got {env!r}")


def resolve_backend(backend: str | None = None) -> str:
    name = default_backend() if backend is None else backend.strip().lower()
    if name not in ("cython", "numpy"):
        raise ToolkitError(f"unknown kernel backend {name!r}")
    if name == "cython" and _score_kernels is None:
        raise ToolkitError("cython kernel backend requested but the extension is not built")
    return name


def metric_aux(metric: MetricKind, matrix: np.ndarray):
    """Per-row helpers consumed by the kernels: (aux, var), both float64[n].

    aux holds L2 norms for cosine and row means for snr_distance; var holds
    per-row population variances for snr_distance. Unused slots are zeros and
    ones so every metric can share one kernel signature.
    """
    n, m = matrix.shape
    mid = METRIC_IDS[metric]
    aux = np.zeros(n, dtype=np.float64)
    var = np.ones(n, dtype=np.float64)
    if mid == 1:
        for r0 in range(0, n, _AUX_CHUNK):
            block = matrix[r0 : r0 + _AUX_CHUNK].astype(np.float64)
            aux[r0 : r0 + block.shape[0]] = np.sqrt(np.sum(block * block, axis=1))
        if not (aux > 0.0).all():
            bad = int(np.flatnonzero(aux <= 0.0)[0])
            raise ToolkitError(f"cosine similarity undefined: row {bad} is a zero vector")
    elif mid == 3:
        for r0 in range(0, n, _AUX_CHUNK):
            block = matrix[r0 : r0 + _AUX_CHUNK].astype(np.float64)
            means = np.sum(block, axis=1) / m
            aux[r0 : r0 + block.shape[0]] = means
            centered = block - means[:, None]
            var[r0 : r0 + block.shape[0]] = np.sum(centered * centered, axis=1) / m
    return aux, var


def score_block(
    metric: MetricKind,
    q: np.ndarray,
    x: np.ndarray,
    c0: int,
    c1: int,
    q_aux: np.ndarray,
    x_aux: np.ndarray,
    q_var: np.ndarray,
    out: np.ndarray,
    threads: int = 1,
    backend: str | None = None,
) -> None:
    """Fill out[:, : c1 - c0] with minimized float32 scores for q vs x[c0:c1]."""
    name = resolve_backend(backend)
    mid = METRIC_IDS[metric]
    impl = _score_kernels if name == "cython" else _score_numpy
    impl.score_block(mid, q, x, c0, c1, q_aux, x_aux, q_var, out, int(threads))
