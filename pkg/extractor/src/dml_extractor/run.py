"""Extraction passes: embeddings for an image folder, then per-image
SmoothGrad gradient stacks of the loss-specific distance to the black-image
baseline."""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np
import torch
from PIL import Image

from .config import ExtractorConfig, ExtractorError
from .distances import distance_gradient
from .tensorio import write_tensor

log = logging.getLogger("dml_extractor")

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".gif", ".webp", ".tif", ".tiff"}
SKIP_LOG = "skipped.log"


def load_model(checkpoint: str | Path):
    """Load a TorchScript archive or a pickled module, in eval mode on CPU."""
    checkpoint = Path(checkpoint)
    if not checkpoint.exists():
        raise ExtractorError(f"checkpoint {checkpoint} does not exist")
    try:
        model = torch.jit.load(str(checkpoint), map_location="cpu")
    except Exception:
        try:
            model = torch.load(checkpoint, map_location="cpu", weights_only=False)
        except Exception as exc:
            raise ExtractorError(f"cannot load checkpoint {checkpoint}: {exc}") from exc
    if not callable(model):
        raise ExtractorError(
            f"checkpoint {checkpoint} is not a callable model (got {type(model).__name__}); "
            "save the module itself, not a state_dict"
        )
    if hasattr(model, "eval"):
        model.eval()
    return model


def _list_images(image_dir: Path) -> list[Path]:
    if not image_dir.is_dir():
        raise ExtractorError(f"image folder {image_dir} does not exist")
    paths = sorted(
        p for p in image_dir.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES
    )
    if not paths:
        raise ExtractorError(f"no images in {image_dir}")
    stems = [p.stem for p in paths]
    if len(set(stems)) != len(stems):
        dupe = next(s for s in stems if stems.count(s) > 1)
        raise ExtractorError(f"duplicate image id {dupe!r} in {image_dir}")
    return paths


def _load_image(path: Path, resolution: int) -> np.ndarray:
    with Image.open(path) as img:
        rgb = img.convert("RGB").resize((resolution, resolution), Image.BILINEAR)
    return np.asarray(rgb, dtype=np.float32) / 255.0  # [H, W, C] in [0, 1]


def _record_skip(out_dir: Path, phase: str, name: str, reason: str) -> None:
    log.warning("%s: skipping %s: %s", phase, name, reason)
    with (out_dir / SKIP_LOG).open("a", encoding="utf-8") as fh:
        fh.write(f"{phase}\t{name}\t{reason}\n")


def _readable_images(config: ExtractorConfig, phase: str) -> list[tuple[str, np.ndarray]]:
    loaded = []
    for path in _list_images(config.image_dir):
        try:
            loaded.append((path.stem, _load_image(path, config.resolution)))
        except Exception as exc:
            _record_skip(config.out_dir, phase, path.name, f"unreadable ({exc})")
    if not loaded:
        raise ExtractorError(f"every image in {config.image_dir} was unreadable")
    return loaded


def write_meta(config: ExtractorConfig, **extra) -> Path:
    """Write (or update) ``meta.json`` with the run parameters."""
    meta_path = config.out_dir / "meta.json"
    meta = {}
    if meta_path.exists():
        meta = json.loads(meta_path.read_text(encoding="utf-8"))
    meta.update(
        {
            "l": config.samples,
            "sigma": config.sigma,
            "metric": config.metric,
            "resolution": config.resolution,
            "seed": config.seed,
            "baseline": "zeros_in_input_space",
            "noise_clipped": False,
        }
    )
    meta.update(extra)
    meta_path.write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    return meta_path


def _to_model_input(batch: np.ndarray) -> torch.Tensor:
    # [B, H, W, C] float32 in [0, 1] -> [B, C, H, W]
    return torch.from_numpy(batch).permute(0, 3, 1, 2).contiguous()


def extract_embeddings(config: ExtractorConfig, model=None) -> tuple[list[str], np.ndarray]:
    """Embed every readable image; writes ``embeddings.{json,bin}``, ``ids.txt``
    and ``meta.json`` into the output dir. Returns (ids, matrix)."""
    config.out_dir.mkdir(parents=True, exist_ok=True)
    if model is None:
        model = load_model(config.checkpoint)
    loaded = _readable_images(config, "embeddings")
    ids = [stem for stem, _ in loaded]
    rows = []
    with torch.no_grad():
        for start in range(0, len(loaded), config.batch_size):
            chunk = loaded[start : start + config.batch_size]
            batch = np.stack([img for _, img in chunk])
            out = model(_to_model_input(batch))
            if out.ndim != 2 or out.shape[0] != len(chunk):
                raise ExtractorError(
                    f"model must map [B, C, H, W] to [B, m]; got output shape {tuple(out.shape)}"
                )
            rows.append(out.detach().cpu().to(torch.float32).numpy())
    matrix = np.concatenate(rows, axis=0)
    write_tensor(matrix, config.out_dir / "embeddings")
    (config.out_dir / "ids.txt").write_text(
        "".join(i + "\n" for i in ids), encoding="utf-8"
    )
    write_meta(config, n_images=len(ids), embedding_dim=int(matrix.shape[1]))
    log.info("embeddings: wrote [%d, %d] matrix", matrix.shape[0], matrix.shape[1])
    return ids, matrix


def extract_gradient_stacks(config: ExtractorConfig, model=None) -> list[str]:
    """Per readable image, write ``grads/<id>.{json,bin}`` holding the
    [l, H, W, C] stack of gradients of d(f(I + noise), x_base) w.r.t. the
    pixels. Noise is gaussian with scale sigma, seeded, and not clipped to
    the valid pixel range. Returns the ids written."""
    config.out_dir.mkdir(parents=True, exist_ok=True)
    if model is None:
        model = load_model(config.checkpoint)
    loaded = _readable_images(config, "grads")
    grads_dir = config.out_dir / "grads"
    grads_dir.mkdir(exist_ok=True)

    res = config.resolution
    with torch.no_grad():
        x_base = model(torch.zeros((1, 3, res, res)))[0].detach()

    generator = torch.Generator().manual_seed(config.seed)
    written = []
    for stem, img in loaded:
        image = torch.from_numpy(img).permute(2, 0, 1).contiguous()  # [C, H, W]
        stack = np.empty((config.samples, res, res, 3), dtype=np.float32)
        for k in range(config.samples):
            noise = config.sigma * torch.randn(image.shape, generator=generator)
            grad = distance_gradient(model, image + noise, x_base, config.metric)
            stack[k] = grad.cpu().to(torch.float32).numpy()
        if not np.isfinite(stack).all():
            _record_skip(config.out_dir, "grads", stem, "non-finite gradient")
            continue
        write_tensor(stack, grads_dir / stem)
        written.append(stem)
    if not written:
        raise ExtractorError("every gradient stack was non-finite")
    write_meta(config, n_stacks=len(written))
    log.info("grads: wrote %d stacks of shape [%d, %d, %d, 3]", len(written), config.samples, res, res)
    return written
