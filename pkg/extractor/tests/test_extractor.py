import json

import numpy as np
import pytest
import torch
from PIL import Image
from torch import nn

from dml_extractor import (
    ExtractorConfig,
    ExtractorError,
    distance,
    distance_gradient,
    extract_embeddings,
    extract_gradient_stacks,
)
from dml_extractor.cli import main

RES = 8
DIM = 6


def _toy_model(dtype=torch.float32):
    torch.manual_seed(0)
    model = nn.Sequential(
        nn.Conv2d(3, 4, kernel_size=3, padding=1),
        nn.Tanh(),
        nn.Flatten(),
        nn.Linear(4 * RES * RES, DIM),
    )
    return model.to(dtype).eval()


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    path = tmp_path_factory.mktemp("ck") / "toy.pt"
    model = _toy_model()
    traced = torch.jit.trace(model, torch.zeros((1, 3, RES, RES)))
    traced.save(str(path))
    return path


@pytest.fixture(scope="module")
def image_dir(tmp_path_factory):
    folder = tmp_path_factory.mktemp("imgs")
    rng = np.random.default_rng(12)
    for k in range(6):
        arr = rng.integers(0, 256, size=(16, 16, 3), dtype=np.uint8)
        Image.fromarray(arr).save(folder / f"img_{k:02d}.png")
    return folder


def _config(checkpoint, image_dir, out_dir, **kw):
    base = dict(
        checkpoint=checkpoint,
        image_dir=image_dir,
        out_dir=out_dir,
        metric="euclidean",
        samples=3,
        sigma=0.05,
        resolution=RES,
        seed=7,
    )
    base.update(kw)
    return ExtractorConfig(**base)


def test_config_validation(tmp_path):
    ok = dict(checkpoint=tmp_path, image_dir=tmp_path, out_dir=tmp_path)
    with pytest.raises(ExtractorError):
        ExtractorConfig(**ok, metric="manhattan")
    with pytest.raises(ExtractorError):
        ExtractorConfig(**ok, samples=0)
    with pytest.raises(ExtractorError):
        ExtractorConfig(**ok, sigma=0.0)
    with pytest.raises(ExtractorError):
        ExtractorConfig(**ok, sigma=-0.1)
    with pytest.raises(ExtractorError):
        ExtractorConfig(**ok, resolution=0)
    with pytest.raises(ExtractorError):
        ExtractorConfig(**ok, batch_size=0)


def test_gradient_matches_central_finite_differences():
    model = _toy_model(torch.float64)
    rng = np.random.default_rng(3)
    image = torch.from_numpy(rng.uniform(size=(3, RES, RES))).to(torch.float64)
    with torch.no_grad():
        x_base = model(torch.zeros((1, 3, RES, RES), dtype=torch.float64))[0]

    h = 1e-4
    for metric in ("euclidean", "cosine_similarity"):
        grad = distance_gradient(model, image, x_base, metric).numpy()  # [H, W, C]

        def d_at(flat_pixels):
            x = torch.from_numpy(flat_pixels.reshape(3, RES, RES)).unsqueeze(0)
            with torch.no_grad():
                return float(distance(metric, model(x)[0], x_base))

        flat = image.numpy().ravel().copy()
        fd = np.empty_like(flat)
        for i in range(flat.size):
            kept = flat[i]
            flat[i] = kept + h
            hi = d_at(flat)
            flat[i] = kept - h
            lo = d_at(flat)
            flat[i] = kept
            fd[i] = (hi - lo) / (2 * h)
        fd = fd.reshape(3, RES, RES).transpose(1, 2, 0)
        rel = np.linalg.norm(grad - fd) / np.linalg.norm(fd)
        assert rel < 1e-3, f"{metric}: relative error {rel:.2e}"


def test_black_baseline_has_zero_distance_and_gradient():
    model = _toy_model()
    black = torch.zeros((3, RES, RES))
    with torch.no_grad():
        x_base = model(black.unsqueeze(0))[0]
    assert float(distance("euclidean", x_base, x_base)) == 0.0
    grad = distance_gradient(model, black, x_base, "euclidean")
    assert torch.equal(grad, torch.zeros((RES, RES, 3)))


def test_end_to_end_files_round_trip(checkpoint, image_dir, tmp_path):
    dmlscope = pytest.importorskip("dmlscope")
    config = _config(checkpoint, image_dir, tmp_path / "out")
    ids, matrix = extract_embeddings(config)
    written = extract_gradient_stacks(config)

    assert ids == [f"img_{k:02d}" for k in range(6)]
    assert matrix.shape == (6, DIM)
    assert written == ids

    embs = dmlscope.load_embedding_set(config.out_dir)
    assert embs.ids == tuple(ids)
    assert embs.metric == dmlscope.MetricKind.EUCLIDEAN
    assert np.array_equal(embs.matrix, matrix.astype(np.float32))

    lines = (config.out_dir / "ids.txt").read_text().splitlines()
    assert lines == ids

    for stem in written:
        stack = dmlscope.read_tensor(config.out_dir / "grads" / f"{stem}.json")
        assert stack.shape == (3, RES, RES, 3)

    meta = json.loads((config.out_dir / "meta.json").read_text())
    assert meta["l"] == 3 and meta["sigma"] == 0.05
    assert meta["metric"] == "euclidean" and meta["resolution"] == RES
    assert meta["seed"] == 7 and meta["baseline"] == "zeros_in_input_space"
    assert meta["noise_clipped"] is False
    assert meta["n_images"] == 6 and meta["embedding_dim"] == DIM and meta["n_stacks"] == 6


def test_stack_mean_matches_toolkit_smoothgrad_mean(checkpoint, image_dir, tmp_path):
    dmlscope = pytest.importorskip("dmlscope")
    config = _config(checkpoint, image_dir, tmp_path / "out", samples=5)
    extract_gradient_stacks(config)
    for sidecar in sorted((config.out_dir / "grads").glob("*.json")):
        stack = dmlscope.read_tensor(sidecar)
        toolkit_mean = dmlscope.smoothgrad_mean(
            dmlscope.GradientStack(image_id=sidecar.stem, samples=stack)
        )
        ours = stack.mean(axis=0)
        assert float(np.abs(toolkit_mean - ours).max()) <= 1e-6


def test_seeded_runs_are_reproducible(checkpoint, image_dir, tmp_path):
    a = _config(checkpoint, image_dir, tmp_path / "a")
    b = _config(checkpoint, image_dir, tmp_path / "b")
    c = _config(checkpoint, image_dir, tmp_path / "c", seed=8)
    for cfg in (a, b, c):
        extract_embeddings(cfg)
        extract_gradient_stacks(cfg)
    assert (a.out_dir / "embeddings.bin").read_bytes() == (b.out_dir / "embeddings.bin").read_bytes()
    name = "img_00.bin"
    assert (a.out_dir / "grads" / name).read_bytes() == (b.out_dir / "grads" / name).read_bytes()
    assert (a.out_dir / "grads" / name).read_bytes() != (c.out_dir / "grads" / name).read_bytes()


def test_batch_size_does_not_change_embeddings(checkpoint, image_dir, tmp_path):
    small = _config(checkpoint, image_dir, tmp_path / "s", batch_size=2)
    big = _config(checkpoint, image_dir, tmp_path / "b", batch_size=32)
    _, m1 = extract_embeddings(small)
    _, m2 = extract_embeddings(big)
    assert np.allclose(m1, m2, atol=1e-5)


def test_unreadable_image_skipped_and_logged(checkpoint, image_dir, tmp_path):
    folder = tmp_path / "imgs"
    folder.mkdir()
    for p in image_dir.iterdir():
        (folder / p.name).write_bytes(p.read_bytes())
    (folder / "broken.png").write_bytes(b"this is not a png")
    config = _config(checkpoint, folder, tmp_path / "out")
    ids, matrix = extract_embeddings(config)
    assert "broken" not in ids and matrix.shape[0] == 6
    log = (config.out_dir / "skipped.log").read_text()
    assert "broken.png" in log and "unreadable" in log


def test_duplicate_image_stem_rejected(checkpoint, image_dir, tmp_path):
    folder = tmp_path / "imgs"
    folder.mkdir()
    src = next(image_dir.glob("*.png"))
    (folder / "same.png").write_bytes(src.read_bytes())
    Image.open(src).save(folder / "same.jpg")
    with pytest.raises(ExtractorError, match="duplicate image id"):
        extract_embeddings(_config(checkpoint, folder, tmp_path / "out"))


def test_non_finite_gradients_recorded_and_skipped(image_dir, tmp_path):
    class NanModel(nn.Module):
        def forward(self, x):
            return x.flatten(1)[:, :4] * float("nan")

    config = _config(tmp_path / "missing.pt", image_dir, tmp_path / "out")
    with pytest.raises(ExtractorError, match="non-finite"):
        extract_gradient_stacks(config, model=NanModel().eval())
    log = (config.out_dir / "skipped.log").read_text()
    assert "non-finite gradient" in log and "img_00" in log


def test_state_dict_checkpoint_rejected(image_dir, tmp_path):
    path = tmp_path / "weights.pt"
    torch.save(_toy_model().state_dict(), path)
    with pytest.raises(ExtractorError, match="not a callable model"):
        extract_embeddings(_config(path, image_dir, tmp_path / "out"))


def test_cli_end_to_end(checkpoint, image_dir, tmp_path):
    out = tmp_path / "out"
    code = main([
        "--checkpoint", str(checkpoint),
        "--images", str(image_dir),
        "--out", str(out),
        "--samples", "2",
        "--sigma", "0.05",
        "--resolution", str(RES),
        "--seed", "3",
    ])
    assert code == 0
    assert (out / "embeddings.json").exists() and (out / "ids.txt").exists()
    assert (out / "meta.json").exists()
    assert len(list((out / "grads").glob("*.json"))) == 6


def test_cli_rejects_bad_inputs(checkpoint, image_dir, tmp_path):
    args = ["--checkpoint", str(checkpoint), "--images", str(image_dir),
            "--out", str(tmp_path / "o")]
    assert main(args + ["--metric", "manhattan"]) == 1
    assert main(["--checkpoint", str(tmp_path / "nope.pt"), "--images", str(image_dir),
                 "--out", str(tmp_path / "o2")]) == 1
    assert main(args + ["--samples", "0"]) == 1
