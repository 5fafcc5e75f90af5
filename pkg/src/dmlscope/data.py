"""Shared domain types: embedding sets, property tables, gradient stacks, saliency maps.

All array payloads are float32, row-major, and finite; every type validates its
invariants at construction time and is immutable afterwards, so instances are
safe to share across threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import IdMismatchError, NonFiniteDataError, ToolkitError


class MetricKind(str, Enum):
    EUCLIDEAN = "euclidean"
    SQUARED_EUCLIDEAN = "squared_euclidean"
    COSINE_SIMILARITY = "cosine_similarity"
    DOT_PRODUCT_SIMILARITY = "dot_product_similarity"
    SNR_DISTANCE = "snr_distance"

    @property
    def is_similarity(self) -> bool:
        """True when larger scores mean closer (cosine, dot product)."""
        return self in (MetricKind.COSINE_SIMILARITY, MetricKind.DOT_PRODUCT_SIMILARITY)

    @property
    def orientation(self) -> str:
        return "similarity" if self.is_similarity else "distance"

    @classmethod
    def parse(cls, name: str) -> "MetricKind":
        try:
            return cls(name.strip().lower())
        except ValueError:
            valid = ", ".join(m.value for m in cls)
            raise ToolkitError(f"unknown metric {name!r}; expected one of: {valid}") from None


def check_tensor(values, what: str = "tensor", ndim: int | None = None) -> np.ndarray:
    """Validate and normalize an array payload to finite float32, C-order.

    Rejects empty tensors and non-finite values; every downstream statistic
    divides by element counts, so an empty tensor is never meaningful.
    """
    arr = np.asarray(values)
    if arr.dtype != np.float32:
        arr = arr.astype(np.float32)
    arr = np.ascontiguousarray(arr)
    if arr.ndim == 0 or arr.size == 0:
        raise ToolkitError(f"{what}: empty tensors are invalid (shape {list(arr.shape)})")
    if ndim is not None and arr.ndim != ndim:
        raise ToolkitError(f"{what}: expected {ndim} axes, got shape {list(arr.shape)}")
    if not np.isfinite(arr).all():
        idx = int(np.flatnonzero(~np.isfinite(arr).ravel())[0])
        raise NonFiniteDataError(f"{what}: non-finite data at flat index {idx}")
    return arr


def _check_unique_ids(ids: Sequence[str], what: str) -> tuple[str, ...]:
    ids = tuple(str(i) for i in ids)
    if len(ids) == 0:
        raise ToolkitError(f"{what}: needs at least one id")
    if len(set(ids)) != len(ids):
        seen, dupes = set(), []
        for i in ids:
            if i in seen:
                dupes.append(i)
            seen.add(i)
        raise ToolkitError(f"{what}: duplicate ids {sorted(set(dupes))}")
    return ids


def check_same_ids(a: Sequence[str], b: Sequence[str], what: str = "id sets") -> None:
    """Fail before any computation when two id sets differ; lists the symmetric difference."""
    sa, sb = set(a), set(b)
    if sa != sb:
        diff = sorted(sa.symmetric_difference(sb))
        shown = diff[:20]
        more = f" (+{len(diff) - len(shown)} more)" if len(diff) > len(shown) else ""
        raise IdMismatchError(f"{what} differ; symmetric difference: {shown}{more}")


@dataclass(frozen=True)
class EmbeddingSet:
    """n x m embedding matrix with row ids and the metric the model was trained with."""

    ids: tuple[str, ...]
    matrix: np.ndarray
    metric: MetricKind

    def __post_init__(self):
        object.__setattr__(self, "ids", _check_unique_ids(self.ids, "EmbeddingSet"))
        mat = check_tensor(self.matrix, "EmbeddingSet.matrix", ndim=2)
        object.__setattr__(self, "matrix", mat)
        if len(self.ids) != mat.shape[0]:
            raise ToolkitError(
                f"EmbeddingSet: {len(self.ids)} ids but matrix has {mat.shape[0]} rows"
            )
        if self.metric is MetricKind.COSINE_SIMILARITY:
            zero = ~mat.any(axis=1)
            if zero.any():
                rows = np.flatnonzero(zero)[:10].tolist()
                raise ToolkitError(f"EmbeddingSet: all-zero rows {rows} invalid under cosine")

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass(frozen=True)
class PropertyTable:
    """Categorical property values per id; one aligned string column per property."""

    ids: tuple[str, ...]
    properties: dict[str, tuple[str, ...]]

    def __post_init__(self):
        object.__setattr__(self, "ids", _check_unique_ids(self.ids, "PropertyTable"))
        cols = {}
        for name, values in self.properties.items():
            if not str(name).strip():
                raise ToolkitError("PropertyTable: empty property name")
            values = tuple(str(v) for v in values)
            if len(values) != len(self.ids):
                raise ToolkitError(
                    f"PropertyTable: column {name!r} has {len(values)} values "
                    f"for {len(self.ids)} ids"
                )
            cols[str(name)] = values
        object.__setattr__(self, "properties", cols)

    @property
    def property_names(self) -> list[str]:
        return list(self.properties)

    def column(self, name: str) -> tuple[str, ...]:
        try:
            return self.properties[name]
        except KeyError:
            raise ToolkitError(f"PropertyTable: no property {name!r}") from None

    def alphabet(self, name: str) -> list[str]:
        """Distinct values observed for a property, sorted."""
        return sorted(set(self.column(name)))

    def reordered(self, ids: Sequence[str]) -> "PropertyTable":
        """Return a copy whose rows follow ``ids``; the id sets must match exactly."""
        check_same_ids(self.ids, ids, "PropertyTable vs requested ids")
        pos = {i: k for k, i in enumerate(self.ids)}
        order = [pos[i] for i in ids]
        return PropertyTable(
            ids=tuple(ids),
            properties={n: tuple(col[k] for k in order) for n, col in self.properties.items()},
        )


@dataclass(frozen=True)
class GradientStack:
    """Per-image stack of noisy-sample input gradients, shape [l, H, W, C]."""

    image_id: str
    samples: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "samples", check_tensor(self.samples, f"GradientStack[{self.image_id}]", ndim=4)
        )

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]


@dataclass(frozen=True)
class SaliencyMap:
    """H x W importance grid with values in [0, 1]."""

    image_id: str
    values: np.ndarray

    def __post_init__(self):
        vals = check_tensor(self.values, f"SaliencyMap[{self.image_id}]", ndim=2)
        if float(vals.min()) < 0.0 or float(vals.max()) > 1.0:
            raise ToolkitError(
                f"SaliencyMap[{self.image_id}]: values outside [0, 1] "
                f"(min {vals.min():.6g}, max {vals.max():.6g})"
            )
        object.__setattr__(self, "values", vals)
