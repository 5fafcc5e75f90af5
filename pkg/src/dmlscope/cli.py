"""dmlscope command line: saliency post-processing/comparison, NR-Precision
tables, the group Mann-Whitney test, and synthetic dataset tooling.

Exit codes: 0 success, 1 input or validation error, 2 internal error. Every
subcommand is deterministic given identical inputs, flags, and seeds. A
``_SUCCESS`` marker is written only on clean completion (inside output
directories, or as a ``<name>._SUCCESS`` sibling for single-file outputs), so
partial outputs never masquerade as complete.

Thread count precedence: ``--threads`` flag, then the ``DMLSCOPE_THREADS``
environment variable, then a top-level ``threads`` key in ``--config``, then 1.
All other flags can be defaulted from a TOML config file whose tables mirror
the subcommand paths (``[nrprec]``, ``[saliency.compare]``, ...); explicit
flags always win.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path
from statistics import NormalDist

import click

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from .data import GradientStack, MetricKind, SaliencyMap
from .errors import ToolkitError
from .metrics import SIGNIFICANCE_THRESHOLD, nr_precision_all
from .reports import (
    read_nrprec_csv,
    render_comparison_csv,
    render_comparison_markdown,
    render_group_test_csv,
    render_group_test_markdown,
    render_nrprec_csv,
    render_nrprec_markdown,
)
from .saliency import compare_models, postprocess, smoothgrad_mean
from .stats import mann_whitney_u
from .synth import emit_render_jobs, sample_manifest, synth_embed
from .tensorio import (
    load_embedding_set,
    read_property_table,
    read_tensor,
    save_embedding_set,
    write_property_table,
    write_tensor,
)

THREADS_ENV = "DMLSCOPE_THREADS"
SUCCESS_MARKER = "_SUCCESS"

_METRIC_CHOICE = click.Choice([m.value for m in MetricKind])
_FORMAT_CHOICE = click.Choice(["csv", "markdown"])


# config keys are spelled like the flags; map them onto click parameter names
_CONFIG_KEY_ALIASES = {"format": "table_format"}


def _normalize_config(tree: dict) -> dict:
    """Flag-style config keys -> parameter names; drop ``threads`` (manual precedence)."""
    out = {}
    for key, value in tree.items():
        key = str(key).replace("-", "_")
        if key == "threads":
            continue
        key = _CONFIG_KEY_ALIASES.get(key, key)
        out[key] = _normalize_config(value) if isinstance(value, dict) else value
    return out


def _load_config(path: str | None) -> tuple[dict, int | None]:
    if path is None:
        return {}, None
    try:
        with open(path, "rb") as fh:
            tree = tomllib.load(fh)
    except OSError as exc:
        raise ToolkitError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ToolkitError(f"config {path}: {exc}") from exc
    threads = tree.get("threads")
    if threads is not None and (not isinstance(threads, int) or threads < 1):
        raise ToolkitError(f"config {path}: threads must be a positive integer")
    return _normalize_config(tree), threads


def _resolve_threads(ctx: click.Context, flag_value: int | None) -> int:
    if flag_value is not None:
        if flag_value < 1:
            raise ToolkitError(f"--threads must be >= 1, got {flag_value}")
        return flag_value
    env = os.environ.get(THREADS_ENV)
    if env is not None and env.strip():
        try:
            value = int(env)
        except ValueError:
            raise ToolkitError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        if value < 1:
            raise ToolkitError(f"{THREADS_ENV} must be >= 1, got {value}")
        return value
    cfg = (ctx.obj or {}).get("config_threads")
    if cfg is not None:
        return cfg
    return 1


def _check_alpha(alpha: float) -> float:
    if not 0.0 < alpha < 1.0:
        raise ToolkitError(f"--alpha must be in (0, 1), got {alpha}")
    return alpha


def _threshold(alpha: float) -> float:
    """Two-sided z threshold; the canonical 2.576 at the default 1% level."""
    if alpha == 0.01:
        return SIGNIFICANCE_THRESHOLD
    return NormalDist().inv_cdf(1.0 - alpha / 2.0)


def _parse_weights(text: str) -> dict[str, float]:
    """Parse ``name=value,name=value`` weight lists."""
    weights: dict[str, float] = {}
    if not text.strip():
        return weights
    for part in text.split(","):
        name, sep, value = part.partition("=")
        name = name.strip()
        if not sep or not name:
            raise ToolkitError(f"bad weight entry {part!r}; expected name=value")
        if name in weights:
            raise ToolkitError(f"duplicate weight for {name!r}")
        try:
            weights[name] = float(value)
        except ValueError:
            raise ToolkitError(f"bad weight value {value!r} for {name!r}") from None
    return weights


def _clear_marker(directory: Path) -> None:
    marker = directory / SUCCESS_MARKER
    if marker.exists():
        marker.unlink()


def _write_marker(directory: Path) -> None:
    (directory / SUCCESS_MARKER).write_text("", encoding="utf-8")


def _file_marker(path: Path) -> Path:
    return path.with_name(path.name + "." + SUCCESS_MARKER)


def _emit_table(text: str, out: str | None) -> None:
    """Write the table atomically to --out (plus a sibling marker), else stdout."""
    if out is None:
        click.echo(text, nl=False)
        return
    path = Path(out)
    if path.parent and not path.parent.exists():
        path.parent.mkdir(parents=True, exist_ok=True)
    marker = _file_marker(path)
    if marker.exists():
        marker.unlink()
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
    marker.write_text("", encoding="utf-8")


@click.group(name="dmlscope")
@click.option("--config", type=click.Path(), default=None, help="TOML file of flag defaults.")
@click.pass_context
def cli(ctx, config):
    """Feature analysis for deep metric learning models."""
    default_map, config_threads = _load_config(config)
    ctx.default_map = default_map
    ctx.obj = {"config_threads": config_threads}


@cli.group(name="saliency")
def saliency_group():
    """Saliency map post-processing and cross-model comparison."""


@saliency_group.command(name="postprocess")
@click.argument("in_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("out_dir", type=click.Path(file_okay=False))
def saliency_postprocess(in_dir, out_dir):
    """Average gradient stacks into saliency maps (one tnsr-v1 pair per stack)."""
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    sidecars = sorted(in_dir.glob("*.json"))
    if not sidecars:
        raise ToolkitError(f"{in_dir}: no tnsr-v1 sidecar files found")
    out_dir.mkdir(parents=True, exist_ok=True)
    _clear_marker(out_dir)
    failures = []
    for sidecar in sidecars:
        image_id = sidecar.stem
        try:
            arr = read_tensor(sidecar)
            if arr.ndim != 4:
                raise ToolkitError(f"expected a 4-D gradient stack, got shape {list(arr.shape)}")
            stack = GradientStack(image_id=image_id, samples=arr)
            saliency = postprocess(smoothgrad_mean(stack), image_id=image_id)
            written, _ = write_tensor(saliency.values, out_dir / image_id)
            click.echo(f"ok {image_id} -> {written}")
        except ToolkitError as exc:
            failures.append(sidecar.name)
            click.echo(f"failed {sidecar.name}: {exc}", err=True)
    if failures:
        raise ToolkitError(f"{len(failures)} of {len(sidecars)} stacks failed: {failures}")
    _write_marker(out_dir)


def _load_saliency_dir(directory: Path) -> list[SaliencyMap]:
    sidecars = sorted(directory.glob("*.json"))
    if not sidecars:
        raise ToolkitError(f"{directory}: no saliency maps found")
    return [SaliencyMap(image_id=p.stem, values=read_tensor(p)) for p in sidecars]


@saliency_group.command(name="compare")
@click.argument("model_dirs", nargs=-1, type=click.Path(exists=True, file_okay=False))
@click.option("--format", "table_format", type=_FORMAT_CHOICE, default="csv", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def saliency_compare(model_dirs, table_format, out):
    """Pairwise correlation / divergence between aligned saliency map sets."""
    if len(model_dirs) < 2:
        raise ToolkitError("saliency compare needs at least two model directories")
    maps_by_model = {}
    for d in model_dirs:
        name = Path(d).name
        if name in maps_by_model:
            raise ToolkitError(f"duplicate model name {name!r} on the command line")
        maps_by_model[name] = _load_saliency_dir(Path(d))
    matrix = compare_models(maps_by_model)
    text = render_comparison_csv(matrix) if table_format == "csv" else render_comparison_markdown(matrix)
    _emit_table(text, out)


@cli.command(name="nrprec")
@click.argument("embeddings_dir", type=click.Path(exists=True, file_okay=False))
@click.argument("properties_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--metric", type=_METRIC_CHOICE, default=None, help="Defaults to meta.json.")
@click.option("--include-query", is_flag=True, default=False,
              help="Count the query itself among candidates and matches.")
@click.option("--alpha", type=float, default=0.01, show_default=True)
@click.option("--block-size", type=int, default=None)
@click.option("--threads", type=int, default=None)
@click.option("--format", "table_format", type=_FORMAT_CHOICE, default="csv", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
@click.pass_context
def nrprec(ctx, embeddings_dir, properties_csv, metric, include_query, alpha, block_size,
           threads, table_format, out):
    """Normalized R-Precision per property, most influential first."""
    alpha = _check_alpha(alpha)
    threads = _resolve_threads(ctx, threads)
    embeddings = load_embedding_set(embeddings_dir, metric=metric)
    table = read_property_table(properties_csv)
    reports = nr_precision_all(
        embeddings, table, include_query=include_query, block_size=block_size, threads=threads
    )
    threshold = _threshold(alpha)
    metadata = {
        "include_query": str(include_query).lower(),
        "metric": embeddings.metric.value,
        "alpha": f"{alpha:g}",
        "threshold": repr(threshold),
        "n": embeddings.n,
    }
    if table_format == "csv":
        text = render_nrprec_csv(reports, threshold, metadata)
    else:
        text = render_nrprec_markdown(reports, threshold, label=Path(embeddings_dir).name)
    _emit_table(text, out)


@cli.command(name="group-test")
@click.argument("report_csvs", nargs=-1, type=click.Path(exists=True, dir_okay=False))
@click.option("--grouping", type=click.Path(exists=True, dir_okay=False), required=True,
              help="CSV mapping model name to group label (two groups).")
@click.option("--alpha", type=float, default=0.01, show_default=True)
@click.option("--format", "table_format", type=_FORMAT_CHOICE, default="csv", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), default=None)
def group_test(report_csvs, grouping, alpha, table_format, out):
    """Mann-Whitney U test between two model groups, per property."""
    alpha = _check_alpha(alpha)
    if len(report_csvs) < 2:
        raise ToolkitError("group-test needs at least two report CSVs")
    values: dict[str, dict[str, float]] = {}
    order: list[str] | None = None
    for path in report_csvs:
        model = Path(path).stem
        if model in values:
            raise ToolkitError(f"duplicate report for model {model!r}")
        _, rows = read_nrprec_csv(path)
        if order is None:
            order = list(rows)
        elif set(rows) != set(order):
            raise ToolkitError(
                f"report {path}: property set differs from {report_csvs[0]}"
            )
        values[model] = rows

    grouping_map = _read_grouping(Path(grouping))
    unknown = sorted(set(grouping_map) - set(values))
    if unknown:
        raise ToolkitError(f"unknown model in grouping file: {unknown}")
    missing = sorted(set(values) - set(grouping_map))
    if missing:
        raise ToolkitError(f"missing group label for: {missing}")
    labels = sorted(set(grouping_map.values()))
    if len(labels) != 2:
        raise ToolkitError(f"grouping must define exactly two groups, got {labels}")
    models = list(values)
    group_a = [m for m in models if grouping_map[m] == labels[0]]
    group_b = [m for m in models if grouping_map[m] == labels[1]]

    results = []
    for prop in order:
        res = mann_whitney_u(
            [values[m][prop] for m in group_a], [values[m][prop] for m in group_b]
        )
        results.append((prop, res))
    if table_format == "csv":
        text = render_group_test_csv(results, alpha)
    else:
        text = render_group_test_markdown(results, alpha)
    click.echo(text, nl=False)
    if out is not None:
        _emit_table(text, out)


def _read_grouping(path: Path) -> dict[str, str]:
    try:
        lines = path.read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise ToolkitError(f"cannot read grouping file {path}: {exc}") from exc
    mapping: dict[str, str] = {}
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        if lineno == 1 and line.replace(" ", "") == "model,group":
            continue
        model, sep, group = line.partition(",")
        model, group = model.strip(), group.strip()
        if not sep or not model or not group:
            raise ToolkitError(f"{path}:{lineno}: expected 'model,group', got {line!r}")
        if model in mapping:
            raise ToolkitError(f"{path}:{lineno}: duplicate model {model!r}")
        mapping[model] = group
    if not mapping:
        raise ToolkitError(f"{path}: empty grouping file")
    return mapping


@cli.command(name="manifest")
@click.option("-n", "n", type=int, required=True, help="Number of images to sample.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(dir_okay=False), required=True,
              help="Manifest CSV path (PropertyTable format).")
@click.option("--jobs", type=click.Path(dir_okay=False), default=None,
              help="Also emit a JSONL render-job file.")
def manifest_cmd(n, seed, out, jobs):
    """Sample a property manifest from the render grid, uniformly per property."""
    man = sample_manifest(n, seed)
    out = Path(out)
    if out.parent and not out.parent.exists():
        out.parent.mkdir(parents=True, exist_ok=True)
    marker = _file_marker(out)
    if marker.exists():
        marker.unlink()
    write_property_table(man.to_property_table(), out)
    if jobs is not None:
        emit_render_jobs(man, jobs)
        click.echo(f"wrote {n} rows to {out} and render jobs to {jobs}")
    else:
        click.echo(f"wrote {n} rows to {out}")
    marker.write_text("", encoding="utf-8")


@cli.command(name="synth-embed")
@click.argument("manifest_csv", type=click.Path(exists=True, dir_okay=False))
@click.option("--weights", default="", help="Comma list like car_model=1.0,car_hue=0.2.")
@click.option("--dim", type=int, default=32, show_default=True)
@click.option("--noise", type=float, default=0.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--metric", type=_METRIC_CHOICE, default=MetricKind.EUCLIDEAN.value,
              show_default=True)
@click.option("--out", type=click.Path(file_okay=False), required=True,
              help="Output embedding-set directory.")
def synth_embed_cmd(manifest_csv, weights, dim, noise, seed, metric, out):
    """Generate oracle embeddings with controllable property influence."""
    table = read_property_table(manifest_csv)
    weight_map = _parse_weights(weights)
    embeddings = synth_embed(
        table, weight_map, dim=dim, noise=noise, seed=seed, metric=MetricKind.parse(metric)
    )
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    _clear_marker(out)
    save_embedding_set(embeddings, out)
    click.echo(f"wrote embeddings n={embeddings.n} dim={embeddings.dim} to {out}")
    _write_marker(out)


def main(argv=None) -> int:
    """Console entry point mapping errors to exit codes (0 ok, 1 input, 2 internal)."""
    try:
        cli.main(args=argv, prog_name="dmlscope", standalone_mode=False)
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.Abort:
        return 1
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except ToolkitError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except OSError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception as exc:  # anything else is a bug, not bad input
        click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
