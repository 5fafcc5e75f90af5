"""Synthetic car-render dataset tooling: the property grid, manifest sampling,
render-job emission, and oracle embeddings with controllable property influence.

Manifests draw every property independently and uniformly from its value list
(sampling with replacement; at the grid's three billion combinations duplicate
assignments are vanishingly unlikely), so property columns are pairwise
independent by construction.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .data import EmbeddingSet, MetricKind, PropertyTable
from .errors import ToolkitError

_ANGLES_45 = tuple(str(k * 45) for k in range(8))
_HSV_HUE = tuple(f"0.{k}" for k in range(10))
_HSV_LEVELS = ("0.0", "0.25", "0.5", "0.75", "1.0", "1.25", "1.5", "1.75", "2.0")

PROPERTY_GRID: tuple[tuple[str, tuple[str, ...]], ...] = (
    (
        "car_model",
        (
            "Ferrari Enzo",
            "Mercedes Benz 300sel",
            "Megane RS",
            "Mercedes AMG Coupe",
            "Range Rover Evoque",
            "Tesla Model S",
        ),
    ),
    ("car_rotation", _ANGLES_45),
    ("car_hue", _HSV_HUE),
    ("car_saturation", _HSV_LEVELS),
    ("car_value", _HSV_LEVELS),
    ("bg_hue", _HSV_HUE),
    ("bg_saturation", _HSV_LEVELS),
    ("bg_value", _HSV_LEVELS),
    ("camera_height", ("0.5", "1.5", "2.5", "3.5")),
    ("sun_elevation", ("0", "45", "90")),
    ("sun_rotation", _ANGLES_45),
)


def property_grid() -> tuple[tuple[str, tuple[str, ...]], ...]:
    """The full render grid: ordered (property, value list) pairs."""
    return PROPERTY_GRID


def grid_cardinalities() -> list[int]:
    return [len(values) for _, values in PROPERTY_GRID]


def grid_combination_count() -> int:
    return math.prod(grid_cardinalities())


@dataclass(frozen=True)
class Manifest:
    """Sampled property assignments, one row per image id."""

    ids: tuple[str, ...]
    columns: dict[str, tuple[str, ...]]
    seed: int

    def __post_init__(self):
        for name, values in self.columns.items():
            if len(values) != len(self.ids):
                raise ToolkitError(f"Manifest: column {name!r} misaligned")

    @property
    def n(self) -> int:
        return len(self.ids)

    @property
    def property_names(self) -> list[str]:
        return list(self.columns)

    @property
    def entries(self) -> list[tuple[str, dict[str, str]]]:
        names = self.property_names
        return [
            (img, {name: self.columns[name][i] for name in names})
            for i, img in enumerate(self.ids)
        ]

    def to_property_table(self) -> PropertyTable:
        return PropertyTable(ids=self.ids, properties=dict(self.columns))


def sample_manifest(n: int, seed: int) -> Manifest:
    """Draw n assignments, each property independent and uniform over its values."""
    if n < 1:
        raise ToolkitError(f"manifest size must be >= 1, got {n}")
    rng = np.random.default_rng(seed)
    ids = tuple(f"img_{i:06d}" for i in range(n))
    columns = {}
    for name, values in PROPERTY_GRID:
        draws = rng.integers(0, len(values), size=n)
        columns[name] = tuple(values[k] for k in draws)
    return Manifest(ids=ids, columns=columns, seed=int(seed))


def emit_render_jobs(manifest: Manifest, path) -> int:
    """Write one JSON object per entry (id plus all properties), one per line.

    Key order is stable: id first, then grid order. Returns the line count.
    """
    names = manifest.property_names
    written = 0
    try:
        with open(path, "w", encoding="utf-8") as fh:
            for i, img in enumerate(manifest.ids):
                row = {"id": img}
                for name in names:
                    row[name] = manifest.columns[name][i]
                fh.write(json.dumps(row) + "\n")
                written += 1
    except OSError as exc:
        raise ToolkitError(f"cannot write render jobs to {path}: {exc}") from exc
    return written


def synth_embed(
    manifest: Manifest | PropertyTable,
    weights: dict[str, float],
    dim: int,
    noise: float,
    seed: int,
    metric: MetricKind = MetricKind.EUCLIDEAN,
) -> EmbeddingSet:
    """Oracle embeddings whose property influence is dialed in by `weights`.

    Each (property, value) pair gets one random unit-length center; an image's
    embedding is the weight-scaled sum of its property centers plus isotropic
    Gaussian noise. Higher-weighted properties therefore cluster more strongly.
    Deterministic per (manifest, weights, dim, noise, seed): centers are drawn
    in column order with sorted value lists, then the noise block. Accepts a
    sampled Manifest or any PropertyTable (e.g. a manifest read back from CSV).
    """
    if dim < 2:
        raise ToolkitError(f"dim must be >= 2, got {dim}")
    if noise < 0:
        raise ToolkitError(f"noise must be >= 0, got {noise}")
    if isinstance(manifest, PropertyTable):
        ids = manifest.ids
        columns = manifest.properties
    else:
        ids = manifest.ids
        columns = manifest.columns
    unknown = sorted(set(weights) - set(columns))
    if unknown:
        raise ToolkitError(f"unknown properties in weights: {unknown}")
    for name, w in weights.items():
        if w < 0:
            raise ToolkitError(f"weight for {name!r} must be >= 0, got {w}")
    rng = np.random.default_rng(seed)
    n = len(ids)
    total = np.zeros((n, dim), dtype=np.float64)
    for name in columns:
        if name not in weights:
            continue
        w = float(weights[name])
        column = columns[name]
        values = sorted(set(column))
        centers = {}
        for v in values:
            vec = rng.standard_normal(dim)
            centers[v] = vec / np.sqrt(np.sum(vec * vec))
        if w == 0.0:
            continue
        codes = np.asarray([values.index(v) for v in column])
        stack = np.stack([centers[v] for v in values])
        total += w * stack[codes]
    if noise > 0:
        total += noise * rng.standard_normal((n, dim))
    return EmbeddingSet(ids=tuple(ids), matrix=total.astype(np.float32), metric=metric)
