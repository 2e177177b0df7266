"""CLI: `cs-trainer train --config ...` and `cs-trainer serve --model-dir ... --port ...`."""

from __future__ import annotations

import logging
import sys

import click

from . import DegenerateData, SchemaError
from .serve import serve as run_server
from .train import TrainConfig, train as run_training


@click.group()
@click.option("--verbose", is_flag=True)
def main(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path())
def train(config_path: str) -> None:
    """Train the regressor and write the model plus eval report."""
    try:
        config = TrainConfig.from_file(config_path)
        report = run_training(config)
    except (SchemaError, DegenerateData) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    click.echo(
        f"dev_accuracy={report.dev_accuracy:.4f} test_accuracy={report.test_accuracy:.4f}"
    )


@main.command()
@click.option("--model-dir", required=True, type=click.Path())
@click.option("--port", type=int, default=8321)
@click.option("--host", default="127.0.0.1")
def serve(model_dir: str, port: int, host: str) -> None:
    """Serve POST /score and GET /healthz for the trained model."""
    try:
        run_server(model_dir, port=port, host=host)
    except SchemaError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)


if __name__ == "__main__":
    main()
