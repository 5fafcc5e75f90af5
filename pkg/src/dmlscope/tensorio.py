"""File formats: tnsr-v1 tensor pairs, property-table CSV, embedding-set directories.

A tnsr-v1 tensor is a pair of files: ``<base>.json`` holding
``{"format": "tnsr-v1", "dtype": "f32le", "shape": [...], "data": "<base>.bin"}``
and ``<base>.bin`` holding raw little-endian float32 values, row-major, with no
header. The format is deliberately trivial so extractors written in any
language can emit it bit-exactly.
"""

from __future__ import annotations

import csv
import json
import os
from pathlib import Path

import numpy as np

from .data import EmbeddingSet, MetricKind, PropertyTable, check_tensor
from .errors import CorruptTensorError, NonFiniteDataError, ToolkitError

FORMAT_NAME = "tnsr-v1"
DTYPE_NAME = "f32le"


def write_tensor(values, basename: str | os.PathLike) -> tuple[Path, Path]:
    """Write a float32 tensor as a ``<basename>.json`` / ``<basename>.bin`` pair.

    Returns the (sidecar, payload) paths. The sidecar references the payload by
    file name, so the pair stays valid when the directory is moved.
    """
    arr = check_tensor(values, "write_tensor")
    base = Path(basename)
    sidecar = base.with_name(base.name + ".json")
    payload = base.with_name(base.name + ".bin")
    try:
        payload.write_bytes(arr.astype("<f4", copy=False).tobytes(order="C"))
        sidecar.write_text(
            json.dumps(
                {
                    "format": FORMAT_NAME,
                    "dtype": DTYPE_NAME,
                    "shape": list(arr.shape),
                    "data": payload.name,
                }
            )
            + "\n",
            encoding="utf-8",
        )
    except OSError as exc:
        raise ToolkitError(f"write_tensor: cannot write {base}: {exc}") from exc
    return sidecar, payload


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    """Read a tnsr-v1 pair back into a float32 array, validating every invariant."""
    sidecar = Path(path)
    try:
        meta = json.loads(sidecar.read_text(encoding="utf-8"))
    except OSError as exc:
        raise ToolkitError(f"read_tensor: cannot read {sidecar}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise CorruptTensorError(f"corrupt tensor {sidecar}: sidecar is not JSON ({exc})") from exc

    if not isinstance(meta, dict) or meta.get("format") != FORMAT_NAME:
        raise CorruptTensorError(f"corrupt tensor {sidecar}: missing format tag {FORMAT_NAME!r}")
    if meta.get("dtype") != DTYPE_NAME:
        raise CorruptTensorError(f"corrupt tensor {sidecar}: dtype {meta.get('dtype')!r} unsupported")
    shape = meta.get("shape")
    if (
        not isinstance(shape, list)
        or not shape
        or not all(isinstance(s, int) and s > 0 for s in shape)
    ):
        raise CorruptTensorError(f"corrupt tensor {sidecar}: bad shape {shape!r}")

    data_name = meta.get("data")
    if not isinstance(data_name, str) or not data_name:
        raise CorruptTensorError(f"corrupt tensor {sidecar}: bad data reference {data_name!r}")
    payload = Path(data_name)
    if not payload.is_absolute():
        payload = sidecar.parent / payload
    try:
        raw = payload.read_bytes()
    except OSError as exc:
        raise ToolkitError(f"read_tensor: cannot read {payload}: {exc}") from exc

    count = int(np.prod(shape))
    if len(raw) != 4 * count:
        raise CorruptTensorError(
            f"corrupt tensor {sidecar}: payload has {len(raw)} bytes, expected {4 * count}"
        )
    arr = np.frombuffer(raw, dtype="<f4").reshape(shape)
    arr = np.ascontiguousarray(arr.astype(np.float32, copy=False))
    if not np.isfinite(arr).all():
        idx = int(np.flatnonzero(~np.isfinite(arr).ravel())[0])
        raise NonFiniteDataError(f"non-finite data in {payload} at flat index {idx}")
    return arr


def read_property_table(path: str | os.PathLike) -> PropertyTable:
    """Read a property table from CSV with header ``id,<prop1>,<prop2>,...``."""
    path = Path(path)
    try:
        with path.open("r", encoding="utf-8", newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise ToolkitError(f"{path}: empty property table") from None
            if not header or header[0] != "id":
                raise ToolkitError(f"{path}: header must start with 'id', got {header[:3]}")
            names = header[1:]
            if not names:
                raise ToolkitError(f"{path}: no property columns")
            if any(not n.strip() for n in names):
                raise ToolkitError(f"{path}: empty property name in header")
            ids: list[str] = []
            cols: list[list[str]] = [[] for _ in names]
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise ToolkitError(
                        f"{path}:{lineno}: ragged row with {len(row)} fields, "
                        f"expected {len(header)}"
                    )
                ids.append(row[0])
                for c, v in enumerate(row[1:]):
                    cols[c].append(v)
    except OSError as exc:
        raise ToolkitError(f"cannot read property table {path}: {exc}") from exc
    return PropertyTable(ids=tuple(ids), properties={n: tuple(c) for n, c in zip(names, cols)})


def write_property_table(table: PropertyTable, path: str | os.PathLike) -> None:
    path = Path(path)
    names = table.property_names
    with path.open("w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["id"] + names)
        for k, i in enumerate(table.ids):
            writer.writerow([i] + [table.properties[n][k] for n in names])


def save_embedding_set(embs: EmbeddingSet, directory: str | os.PathLike) -> None:
    """Write ``embeddings.{json,bin}``, ``ids.txt`` and ``meta.json`` into a directory."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    write_tensor(embs.matrix, directory / "embeddings")
    (directory / "ids.txt").write_text("".join(i + "\n" for i in embs.ids), encoding="utf-8")
    (directory / "meta.json").write_text(
        json.dumps({"metric": embs.metric.value, "n": embs.n, "dim": embs.dim}) + "\n",
        encoding="utf-8",
    )


def load_embedding_set(
    directory: str | os.PathLike, metric: MetricKind | str | None = None
) -> EmbeddingSet:
    """Load an embedding-set directory (``embeddings.{json,bin}`` plus ``ids.txt``).

    When ``metric`` is not given it is taken from ``meta.json`` if present,
    defaulting to euclidean.
    """
    directory = Path(directory)
    matrix = read_tensor(directory / "embeddings.json")
    if matrix.ndim != 2:
        raise ToolkitError(f"{directory}: embeddings must be 2-D, got shape {list(matrix.shape)}")
    ids_path = directory / "ids.txt"
    try:
        ids = [ln for ln in ids_path.read_text(encoding="utf-8").splitlines() if ln]
    except OSError as exc:
        raise ToolkitError(f"cannot read {ids_path}: {exc}") from exc
    if metric is None:
        meta_path = directory / "meta.json"
        if meta_path.exists():
            meta = json.loads(meta_path.read_text(encoding="utf-8"))
            metric = meta.get("metric", MetricKind.EUCLIDEAN.value)
        else:
            metric = MetricKind.EUCLIDEAN
    if isinstance(metric, str):
        metric = MetricKind.parse(metric)
    return EmbeddingSet(ids=tuple(ids), matrix=matrix, metric=metric)
