from __future__ import annotations

import logging
import sys

import click

from .config import DEFAULT_SAMPLES, DEFAULT_SIGMA_FRACTION, INPUT_RANGE, METRICS, ExtractorConfig, ExtractorError
from .run import extract_embeddings, extract_gradient_stacks, load_model


@click.command()
@click.option("--checkpoint", required=True, type=click.Path(exists=True, dir_okay=False),
              help="TorchScript archive or pickled module.")
@click.option("--images", "image_dir", required=True, type=click.Path(exists=True, file_okay=False),
              help="Folder of input images.")
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False),
              help="Output directory.")
@click.option("--metric", type=click.Choice(METRICS), default="euclidean", show_default=True,
              help="Loss-specific distance the model was trained with.")
@click.option("--samples", type=int, default=DEFAULT_SAMPLES, show_default=True,
              help="SmoothGrad sample count l.")
@click.option("--sigma", type=float, default=DEFAULT_SIGMA_FRACTION * INPUT_RANGE,
              show_default=True, help="Gaussian noise scale (input range is [0, 1]).")
@click.option("--resolution", type=int, default=224, show_default=True,
              help="Square input resolution.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--batch-size", type=int, default=32, show_default=True)
def cli(checkpoint, image_dir, out_dir, metric, samples, sigma, resolution, seed, batch_size):
    """Extract embeddings and SmoothGrad gradient stacks from a trained model.

    Writes embeddings.{json,bin}, ids.txt, grads/<image_id>.{json,bin} and
    meta.json into the output directory. Unreadable images and non-finite
    gradients are recorded in skipped.log.
    """
    config = ExtractorConfig(
        checkpoint=checkpoint,
        image_dir=image_dir,
        out_dir=out_dir,
        metric=metric,
        samples=samples,
        sigma=sigma,
        resolution=resolution,
        seed=seed,
        batch_size=batch_size,
    )
    model = load_model(config.checkpoint)
    ids, matrix = extract_embeddings(config, model)
    click.echo(f"embeddings: {matrix.shape[0]} images x {matrix.shape[1]} dims")
    written = extract_gradient_stacks(config, model)
    click.echo(f"grads: {len(written)} stacks ({config.samples} samples each)")
    click.echo(f"done: {config.out_dir}")


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.Abort:
        return 1
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return 1
    except (ExtractorError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except Exception as exc:  # pragma: no cover - defensive
        click.echo(f"internal error: {type(exc).__name__}: {exc}", err=True)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
