import csv
import math
from pathlib import Path

import numpy as np
import pytest

from dmlscope import sample_manifest, synth_embed, write_tensor
from dmlscope.cli import _parse_weights, _threshold, main
from dmlscope.reports import read_nrprec_csv
from dmlscope.tensorio import save_embedding_set, write_property_table


def _write_stack(directory: Path, image_id: str, seed: int, shape=(5, 8, 8, 3)):
    directory.mkdir(parents=True, exist_ok=True)
    arr = np.random.default_rng(seed).normal(size=shape).astype(np.float32)
    write_tensor(arr, directory / image_id)


def _read_csv(path: Path):
    lines = [ln for ln in path.read_text().splitlines() if not ln.startswith("#")]
    rows = list(csv.reader(lines))
    return rows[0], rows[1:]


# --- saliency postprocess ----------------------------------------------------


def test_postprocess_clean_run(tmp_path, capsys):
    src = tmp_path / "stacks"
    for i in range(3):
        _write_stack(src, f"img_{i}", seed=i)
    out = tmp_path / "maps"
    assert main(["saliency", "postprocess", str(src), str(out)]) == 0
    assert sorted(p.name for p in out.glob("*.json")) == [
        "img_0.json",
        "img_1.json",
        "img_2.json",
    ]
    assert (out / "_SUCCESS").exists()
    lines = capsys.readouterr().out.splitlines()
    assert len(lines) == 3
    assert all(ln.startswith("ok img_") for ln in lines)


def test_postprocess_corrupt_file_kept_outputs(tmp_path, capsys):
    src = tmp_path / "stacks"
    for i in range(3):
        _write_stack(src, f"img_{i}", seed=i)
    (src / "img_1.bin").write_bytes(b"short")
    out = tmp_path / "maps"
    assert main(["saliency", "postprocess", str(src), str(out)]) == 1
    captured = capsys.readouterr()
    assert "img_1.json" in captured.err
    assert sorted(p.name for p in out.glob("*.json")) == ["img_0.json", "img_2.json"]
    assert not (out / "_SUCCESS").exists()


def test_postprocess_idempotent_bit_identical(tmp_path):
    src = tmp_path / "stacks"
    for i in range(2):
        _write_stack(src, f"img_{i}", seed=10 + i)
    out = tmp_path / "maps"
    assert main(["saliency", "postprocess", str(src), str(out)]) == 0
    first = {p.name: p.read_bytes() for p in out.iterdir()}
    assert main(["saliency", "postprocess", str(src), str(out)]) == 0
    second = {p.name: p.read_bytes() for p in out.iterdir()}
    assert first == second


def test_postprocess_empty_dir(tmp_path):
    src = tmp_path / "empty"
    src.mkdir()
    assert main(["saliency", "postprocess", str(src), str(tmp_path / "o")]) == 1


# --- saliency compare --------------------------------------------------------


def _make_map_dir(directory: Path, n_images: int, model_seed: int):
    directory.mkdir(parents=True, exist_ok=True)
    for i in range(n_images):
        base = np.random.default_rng(500 + i).uniform(size=(6, 6))
        jitter = np.random.default_rng(model_seed * 97 + i).uniform(size=(6, 6))
        vals = np.clip(0.9 * base + 0.1 * jitter, 0.0, 1.0).astype(np.float32)
        write_tensor(vals, directory / f"img_{i}")


def test_compare_identical_dirs(tmp_path):
    a = tmp_path / "model_a"
    _make_map_dir(a, 4, model_seed=1)
    b = tmp_path / "model_b"
    b.mkdir()
    for p in a.iterdir():
        (b / p.name).write_bytes(p.read_bytes())
    out = tmp_path / "cmp.csv"
    assert main(["saliency", "compare", str(a), str(b), "--out", str(out)]) == 0
    header, rows = _read_csv(out)
    assert header[:4] == ["model_a", "model_b", "mean_r", "std_r"]
    assert len(rows) == 1
    assert abs(float(rows[0][2]) - 1.0) < 1e-6
    assert float(rows[0][4]) == 0.0  # jsd of identical maps
    assert (tmp_path / "cmp.csv._SUCCESS").exists()


def test_compare_fourteen_models_has_91_pairs(tmp_path):
    dirs = []
    for k in range(14):
        d = tmp_path / f"model_{k:02d}"
        _make_map_dir(d, 2, model_seed=k)
        dirs.append(str(d))
    out = tmp_path / "cmp.csv"
    assert main(["saliency", "compare", *dirs, "--out", str(out)]) == 0
    _, rows = _read_csv(out)
    assert len(rows) == 91


def test_compare_markdown_columns_follow_cli_order(tmp_path, capsys):
    names = ["zeta", "alpha", "mid"]
    for k, name in enumerate(names):
        _make_map_dir(tmp_path / name, 2, model_seed=k)
    argv = ["saliency", "compare"] + [str(tmp_path / n) for n in names]
    assert main(argv + ["--format", "markdown"]) == 0
    out = capsys.readouterr().out
    header = next(ln for ln in out.splitlines() if ln.startswith("| model |"))
    assert header == "| model | zeta | alpha | mid |"


def test_compare_id_mismatch(tmp_path, capsys):
    a = tmp_path / "a"
    _make_map_dir(a, 3, model_seed=1)
    b = tmp_path / "b"
    _make_map_dir(b, 2, model_seed=2)
    assert main(["saliency", "compare", str(a), str(b)]) == 1
    assert "img_2" in capsys.readouterr().err


def test_compare_needs_two_dirs(tmp_path):
    a = tmp_path / "solo"
    _make_map_dir(a, 2, model_seed=3)
    assert main(["saliency", "compare", str(a)]) == 1


# --- nrprec ------------------------------------------------------------------


@pytest.fixture(scope="module")
def synth_setup(tmp_path_factory):
    root = tmp_path_factory.mktemp("synth")
    man = sample_manifest(600, seed=40)
    props = root / "props.csv"
    write_property_table(man.to_property_table(), props)
    emb = synth_embed(man, {"car_model": 2.0, "camera_height": 1.2}, dim=16, noise=0.05, seed=41)
    emb_dir = root / "embs"
    save_embedding_set(emb, emb_dir)
    return emb_dir, props


def test_nrprec_markers_only_on_weighted_properties(synth_setup, tmp_path):
    emb_dir, props = synth_setup
    out = tmp_path / "report.csv"
    assert main(["nrprec", str(emb_dir), str(props), "--out", str(out)]) == 0
    header, rows = _read_csv(out)
    assert header == ["property", "mean_nrprec", "mean_rprec", "n_queries", "n_skipped",
                      "significant"]
    sig = {r[0] for r in rows if r[5] == "true"}
    assert sig == {"car_model", "camera_height"}
    assert rows[0][0] == "car_model"  # most influential first


def test_nrprec_metadata_reflects_include_query(synth_setup, tmp_path):
    emb_dir, props = synth_setup
    out = tmp_path / "r.csv"
    assert main(["nrprec", str(emb_dir), str(props), "--include-query", "--out", str(out)]) == 0
    meta, values = read_nrprec_csv(out)
    assert meta["include_query"] == "true"
    assert meta["metric"] == "euclidean"
    assert meta["threshold"] == "2.576"
    assert len(values) == 11
    out2 = tmp_path / "r2.csv"
    assert main(["nrprec", str(emb_dir), str(props), "--out", str(out2)]) == 0
    meta2, values2 = read_nrprec_csv(out2)
    assert meta2["include_query"] == "false"
    assert values2 != values  # R and p actually change


def test_nrprec_no_property_columns(synth_setup, tmp_path, capsys):
    emb_dir, _ = synth_setup
    bad = tmp_path / "empty.csv"
    bad.write_text("id\n" + "".join(f"img_{i:06d}\n" for i in range(600)))
    assert main(["nrprec", str(emb_dir), str(bad)]) == 1
    assert "property" in capsys.readouterr().err


def test_nrprec_constant_property_column(synth_setup, tmp_path):
    emb_dir, _ = synth_setup
    bad = tmp_path / "const.csv"
    bad.write_text("id,flat\n" + "".join(f"img_{i:06d},same\n" for i in range(600)))
    assert main(["nrprec", str(emb_dir), str(bad)]) == 1


def test_nrprec_id_mismatch(synth_setup, tmp_path):
    emb_dir, _ = synth_setup
    bad = tmp_path / "other.csv"
    bad.write_text("id,p\nnope_1,a\nnope_2,b\n")
    assert main(["nrprec", str(emb_dir), str(bad)]) == 1


def test_nrprec_deterministic_across_threads_and_blocks(synth_setup, tmp_path):
    emb_dir, props = synth_setup
    outs = []
    for tag, extra in [
        ("t1", ["--threads", "1", "--block-size", "64"]),
        ("t3", ["--threads", "3", "--block-size", "251"]),
    ]:
        out = tmp_path / f"{tag}.csv"
        assert main(["nrprec", str(emb_dir), str(props), *extra, "--out", str(out)]) == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_nrprec_markdown(synth_setup, capsys):
    emb_dir, props = synth_setup
    assert main(["nrprec", str(emb_dir), str(props), "--format", "markdown"]) == 0
    out = capsys.readouterr().out
    assert out.startswith("| model |")
    assert "car_model" in out
    assert "*" in out


# --- group-test ----------------------------------------------------------------


def _write_report(path: Path, values: dict[str, float]):
    lines = ["# include_query=false metric=euclidean alpha=0.01 threshold=2.576 n=100"]
    lines.append("property,mean_nrprec,mean_rprec,n_queries,n_skipped,significant")
    for name, v in values.items():
        lines.append(f"{name},{v!r},0.5,100,0,false")
    path.write_text("\n".join(lines) + "\n")


def test_group_test_nine_vs_five_exact_p(tmp_path, capsys):
    reports = []
    lines = ["model,group"]
    for k in range(14):
        x = 10.0 + k if k < 9 else 1.0 + 0.1 * k
        p = tmp_path / f"model{k:02d}.csv"
        _write_report(p, {"prop_x": x, "prop_y": 5.0})
        reports.append(str(p))
        lines.append(f"model{k:02d},{'ranking' if k < 9 else 'classification'}")
    grouping = tmp_path / "grouping.csv"
    grouping.write_text("\n".join(lines) + "\n")
    out = tmp_path / "gt.csv"
    assert main(["group-test", *reports, "--grouping", str(grouping), "--out", str(out)]) == 0
    header, rows = _read_csv(out)
    assert header == ["property", "u_statistic", "p_value", "method", "significant@0.01"]
    by_prop = {r[0]: r for r in rows}
    assert float(by_prop["prop_x"][2]) == 2 / 2002
    assert by_prop["prop_x"][3] == "exact"
    assert by_prop["prop_x"][4] == "true"
    # identical values in both groups: ties, not significant
    assert by_prop["prop_y"][4] == "false"
    assert float(by_prop["prop_y"][2]) == 1.0
    # the table is also printed
    assert "prop_x" in capsys.readouterr().out


def test_group_test_unknown_model_in_grouping(tmp_path, capsys):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    _write_report(a, {"p": 1.0})
    _write_report(b, {"p": 2.0})
    grouping = tmp_path / "g.csv"
    grouping.write_text("model,group\na,x\nb,y\nghost,x\n")
    assert main(["group-test", str(a), str(b), "--grouping", str(grouping)]) == 1
    assert "ghost" in capsys.readouterr().err


def test_group_test_missing_group_label(tmp_path, capsys):
    a, b, c = (tmp_path / f"{x}.csv" for x in "abc")
    for i, p in enumerate([a, b, c]):
        _write_report(p, {"p": float(i)})
    grouping = tmp_path / "g.csv"
    grouping.write_text("model,group\na,x\nb,y\n")
    assert main(["group-test", str(a), str(b), str(c), "--grouping", str(grouping)]) == 1
    assert "c" in capsys.readouterr().err


def test_group_test_requires_two_groups(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    _write_report(a, {"p": 1.0})
    _write_report(b, {"p": 2.0})
    grouping = tmp_path / "g.csv"
    grouping.write_text("model,group\na,x\nb,x\n")
    assert main(["group-test", str(a), str(b), "--grouping", str(grouping)]) == 1


# --- manifest / synth-embed ----------------------------------------------------


def test_manifest_deterministic_files(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    ja, jb = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert main(["manifest", "-n", "100", "--seed", "7", "--out", str(a), "--jobs", str(ja)]) == 0
    assert main(["manifest", "-n", "100", "--seed", "7", "--out", str(b), "--jobs", str(jb)]) == 0
    assert a.read_bytes() == b.read_bytes()
    assert ja.read_bytes() == jb.read_bytes()
    assert (tmp_path / "a.csv._SUCCESS").exists()
    header = a.read_text().splitlines()[0]
    assert header.startswith("id,car_model,")


def test_synth_embed_cli_round_trip(tmp_path):
    man = tmp_path / "man.csv"
    assert main(["manifest", "-n", "50", "--seed", "3", "--out", str(man)]) == 0
    out = tmp_path / "embs"
    argv = ["synth-embed", str(man), "--weights", "car_model=1.0,car_hue=0.2",
            "--dim", "8", "--noise", "0.1", "--seed", "5", "--out", str(out)]
    assert main(argv) == 0
    assert (out / "_SUCCESS").exists()
    from dmlscope import load_embedding_set

    emb = load_embedding_set(out)
    assert emb.n == 50 and emb.dim == 8


def test_synth_embed_missing_manifest(tmp_path):
    assert main(["synth-embed", str(tmp_path / "nope.csv"), "--out", str(tmp_path / "o")]) == 1


def test_synth_embed_bad_weights(tmp_path):
    man = tmp_path / "man.csv"
    assert main(["manifest", "-n", "10", "--seed", "1", "--out", str(man)]) == 0
    argv = ["synth-embed", str(man), "--weights", "car_model=abc", "--out", str(tmp_path / "o")]
    assert main(argv) == 1


def test_parse_weights():
    assert _parse_weights("car_model=1.0,car_hue=0.2") == {"car_model": 1.0, "car_hue": 0.2}
    assert _parse_weights("") == {}
    assert _parse_weights(" a =2 ") == {"a": 2.0}
    import dmlscope

    with pytest.raises(dmlscope.ToolkitError):
        _parse_weights("a=1,a=2")
    with pytest.raises(dmlscope.ToolkitError):
        _parse_weights("justname")


# --- config, env, thresholds -----------------------------------------------------


def test_threshold_constant_and_inverse_cdf():
    assert _threshold(0.01) == 2.576
    assert abs(_threshold(0.05) - 1.959964) < 1e-5


def test_config_defaults_and_flag_precedence(synth_setup, tmp_path, capsys):
    emb_dir, props = synth_setup
    cfg = tmp_path / "cfg.toml"
    cfg.write_text('[nrprec]\nformat = "markdown"\nblock-size = 64\n')
    assert main(["--config", str(cfg), "nrprec", str(emb_dir), str(props)]) == 0
    assert capsys.readouterr().out.startswith("| model |")
    argv = ["--config", str(cfg), "nrprec", str(emb_dir), str(props), "--format", "csv"]
    assert main(argv) == 0
    assert capsys.readouterr().out.startswith("#")


def test_threads_env_var_and_flag_priority(synth_setup, tmp_path, monkeypatch, capsys):
    emb_dir, props = synth_setup
    monkeypatch.setenv("DMLSCOPE_THREADS", "2")
    out_env = tmp_path / "env.csv"
    assert main(["nrprec", str(emb_dir), str(props), "--out", str(out_env)]) == 0
    out_flag = tmp_path / "flag.csv"
    assert main(["nrprec", str(emb_dir), str(props), "--threads", "1",
                 "--out", str(out_flag)]) == 0
    assert out_env.read_bytes() == out_flag.read_bytes()
    monkeypatch.setenv("DMLSCOPE_THREADS", "bogus")
    assert main(["nrprec", str(emb_dir), str(props)]) == 1
    capsys.readouterr()


def test_bad_config_file(synth_setup, tmp_path):
    emb_dir, props = synth_setup
    cfg = tmp_path / "broken.toml"
    cfg.write_text("not = [valid ( toml")
    assert main(["--config", str(cfg), "nrprec", str(emb_dir), str(props)]) == 1


def test_internal_error_exit_code(synth_setup, monkeypatch, capsys):
    emb_dir, props = synth_setup
    import dmlscope.cli as climod

    def boom(*args, **kwargs):
        raise RuntimeError("synthetic fault")

    monkeypatch.setattr(climod, "nr_precision_all", boom)
    assert main(["nrprec", str(emb_dir), str(props)]) == 2
    assert "internal error" in capsys.readouterr().err


def test_help_exits_zero(capsys):
    assert main(["--help"]) == 0
    assert "saliency" in capsys.readouterr().out


def test_alpha_changes_marker_threshold(synth_setup, tmp_path):
    emb_dir, props = synth_setup
    out = tmp_path / "loose.csv"
    assert main(["nrprec", str(emb_dir), str(props), "--alpha", "0.9",
                 "--out", str(out)]) == 0
    meta, _ = read_nrprec_csv(out)
    threshold = float(meta["threshold"])
    from statistics import NormalDist

    assert math.isclose(threshold, NormalDist().inv_cdf(1 - 0.9 / 2), rel_tol=1e-12)
    _, rows = _read_csv(out)
    for row in rows:  # marker column is exactly |mean| > threshold at this alpha
        assert (row[5] == "true") == (abs(float(row[1])) > threshold)
