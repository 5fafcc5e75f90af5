from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

METRICS = (
    "euclidean",
    "squared_euclidean",
    "cosine_similarity",
    "dot_product_similarity",
    "snr_distance",
)

# images are decoded to float32 in [0, 1], so the input value range is 1.0
INPUT_RANGE = 1.0
DEFAULT_SAMPLES = 25
DEFAULT_SIGMA_FRACTION = 0.10


class ExtractorError(Exception):
    """Invalid configuration, unusable checkpoint, or unwritable output."""


@dataclass(frozen=True)
class ExtractorConfig:
    """One extraction run: which model, which images, how to perturb.

    ``sigma`` defaults to 10% of the input value range; noise is never
    clipped to the valid pixel range (recorded in the run metadata).
    """

    checkpoint: Path
    image_dir: Path
    out_dir: Path
    metric: str = "euclidean"
    samples: int = DEFAULT_SAMPLES  # SmoothGrad sample count l
    sigma: float = DEFAULT_SIGMA_FRACTION * INPUT_RANGE
    resolution: int = 224
    seed: int = 0
    batch_size: int = 32

    def __post_init__(self):
        object.__setattr__(self, "checkpoint", Path(self.checkpoint))
        object.__setattr__(self, "image_dir", Path(self.image_dir))
        object.__setattr__(self, "out_dir", Path(self.out_dir))
        if self.metric not in METRICS:
            raise ExtractorError(f"unknown metric {self.metric!r}, expected one of {METRICS}")
        if self.samples < 1:
            raise ExtractorError(f"samples must be >= 1, got {self.samples}")
        if not self.sigma > 0:
            raise ExtractorError(f"sigma must be > 0, got {self.sigma}")
        if self.resolution < 1:
            raise ExtractorError(f"resolution must be >= 1, got {self.resolution}")
        if self.batch_size < 1:
            raise ExtractorError(f"batch_size must be >= 1, got {self.batch_size}")
