"""Minimal tnsr-v1 writer/reader: ``<base>.json`` sidecar plus ``<base>.bin``
raw little-endian float32 payload, row-major, no header."""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .config import ExtractorError

FORMAT_NAME = "tnsr-v1"
DTYPE_NAME = "f32le"


def write_tensor(values, basename: str | os.PathLike) -> tuple[Path, Path]:
    arr = np.ascontiguousarray(np.asarray(values, dtype=np.float32))
    if arr.ndim == 0 or any(s == 0 for s in arr.shape):
        raise ExtractorError(f"write_tensor: refusing empty tensor of shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ExtractorError(f"write_tensor: non-finite values in {basename}")
    base = Path(basename)
    sidecar = base.with_name(base.name + ".json")
    payload = base.with_name(base.name + ".bin")
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
    return sidecar, payload


def read_tensor(path: str | os.PathLike) -> np.ndarray:
    sidecar = Path(path)
    meta = json.loads(sidecar.read_text(encoding="utf-8"))
    if meta.get("format") != FORMAT_NAME or meta.get("dtype") != DTYPE_NAME:
        raise ExtractorError(f"{sidecar}: not a {FORMAT_NAME}/{DTYPE_NAME} tensor")
    payload = sidecar.parent / meta["data"]
    raw = payload.read_bytes()
    shape = meta["shape"]
    if len(raw) != 4 * int(np.prod(shape)):
        raise ExtractorError(f"{sidecar}: payload size does not match shape {shape}")
    return np.frombuffer(raw, dtype="<f4").reshape(shape).astype(np.float32, copy=False)
