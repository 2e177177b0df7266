"""Command-line surface: generate, interactive, csdata, eval, resume.

Exit codes: 0 ok, 2 config/input error, 3 provider error, 4 parse/shape error.
"""

from __future__ import annotations

import csv
import functools
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import click

from .cs_dataset import build_dataset, load_corpus_dir, write_dataset
from .errors import (
    AllTraitsUnscorable,
    CCIError,
    ConfigError,
    DraftError,
    OutlineShapeError,
    ParseError,
    ProviderError,
    TooShort,
)
from .imagination import ElementMode
from .metrics import (
    Corpus,
    CorpusRole,
    DEFAULT_NGRAM_ORDERS,
    MetricsReport,
    embedding_relevance,
    llm_relevance,
    ngram_averages,
    sentence_similarity,
    story_similarity,
    word_similarity,
)
from .pipeline import PipelineConfig, PipelineRunner, ScorerConfig, load_bundle, resume_config
from .providers import ProviderSet, http_provider_set, mock_provider_set

EXIT_CONFIG = 2
EXIT_PROVIDER = 3
EXIT_PARSE = 4

METRIC_CHOICES = ("ws", "ss", "sim", "embrv", "llmrv")


def guarded(fn):
    """Map typed errors onto the documented exit codes."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (ParseError, OutlineShapeError, TooShort, AllTraitsUnscorable) as exc:
            _fail(exc, EXIT_PARSE)
        except DraftError as exc:
            _fail(exc, EXIT_PROVIDER)
        except ProviderError as exc:
            _fail(exc, EXIT_PROVIDER)
        except ConfigError as exc:
            _fail(exc, EXIT_CONFIG)
        except CCIError as exc:
            _fail(exc, 1)

    return wrapper


def _fail(exc: Exception, code: int) -> None:
    stage = getattr(exc, "stage", None)
    suffix = f" (stage: {stage})" if stage else ""
    click.echo(f"error: {exc}{suffix}", err=True)
    sys.exit(code)


@click.group()
@click.option("--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool) -> None:
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


def _base_config(config_path: str | None) -> PipelineConfig:
    if config_path:
        return PipelineConfig.from_file(config_path)
    return PipelineConfig()


def _apply_overrides(
    cfg: PipelineConfig,
    seed: int | None,
    mock: bool,
    out: str | None,
    run_id: str | None,
    no_ig: bool,
    no_mw: bool,
    element_mode: str | None,
    k: int | None,
    cs_threshold: float | None,
    repetition_threshold: float | None,
    scorer: str | None,
    scorer_endpoint: str | None,
) -> PipelineConfig:
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if mock:
        cfg = replace(cfg, mock=True)
    if out is not None:
        cfg = replace(cfg, output_dir=out)
    if run_id is not None:
        cfg = replace(cfg, run_id=run_id)
    if no_ig:
        cfg = replace(cfg, no_ig=True)
    if no_mw:
        cfg = replace(cfg, no_mw=True)
    if element_mode is not None:
        cfg = replace(cfg, element_mode=ElementMode(element_mode))
    mw = cfg.mw
    if k is not None:
        mw = replace(mw, k=k)
    if cs_threshold is not None:
        mw = replace(mw, cs_threshold=cs_threshold)
    if repetition_threshold is not None:
        mw = replace(mw, repetition_threshold=repetition_threshold)
    if mw is not cfg.mw:
        cfg = replace(cfg, mw=mw)
    if scorer is not None or scorer_endpoint is not None:
        cfg = replace(
            cfg,
            scorer=ScorerConfig(
                mode=scorer or cfg.scorer.mode,
                endpoint=scorer_endpoint if scorer_endpoint is not None else cfg.scorer.endpoint,
                timeout=cfg.scorer.timeout,
            ),
        )
    return cfg


def _pipeline_options(fn):
    options = [
        click.option("--config", "config_path", type=click.Path(), default=None),
        click.option("--seed", type=int, default=None),
        click.option("--mock", is_flag=True, help="Force all providers to deterministic mocks."),
        click.option("--out", type=click.Path(), default=None, help="Output directory."),
        click.option("--run-id", default=None),
        click.option("--no-ig", is_flag=True, help="Text-only story elements."),
        click.option("--no-mw", is_flag=True, help="Disable persona injection."),
        click.option("--k", type=int, default=None, help="Candidates per writer."),
        click.option("--cs-threshold", type=float, default=None),
        click.option("--repetition-threshold", type=float, default=None),
        click.option("--scorer", type=click.Choice(["remote", "baseline"]), default=None),
        click.option("--scorer-endpoint", default=None),
    ]
    for option in reversed(options):
        fn = option(fn)
    return fn


@main.command()
@_pipeline_options
@click.option(
    "--element-mode",
    type=click.Choice([m.value for m in ElementMode]),
    default=None,
)
@click.option("--character-image", type=click.Path(), default=None)
@click.option("--background-image", type=click.Path(), default=None)
@click.option("--mainplot-image", type=click.Path(), default=None)
@click.option("--resume", "resume_run_id", default=None, help="Continue an existing run.")
@guarded
def generate(
    config_path, seed, mock, out, run_id, no_ig, no_mw, k, cs_threshold,
    repetition_threshold, scorer, scorer_endpoint, element_mode,
    character_image, background_image, mainplot_image, resume_run_id,
) -> None:
    """Run the full story pipeline and write a bundle."""
    if resume_run_id:
        cfg = resume_config(out or "runs", resume_run_id)
        bundle_path = PipelineRunner(cfg).run(resume=True)
    else:
        cfg = _base_config(config_path)
        cfg = _apply_overrides(
            cfg, seed, mock, out, run_id, no_ig, no_mw, element_mode,
            k, cs_threshold, repetition_threshold, scorer, scorer_endpoint,
        )
        images = {
            slot: path
            for slot, path in (
                ("character", character_image),
                ("background", background_image),
                ("mainplot", mainplot_image),
            )
            if path
        }
        if images:
            cfg = replace(cfg, user_images={**cfg.user_images, **images})
        bundle_path = PipelineRunner(cfg).run()
    click.echo(str(bundle_path))


@main.command()
@_pipeline_options
@click.option("--character-image", type=click.Path(), required=True)
@click.option("--background-image", type=click.Path(), required=True)
@click.option("--mainplot-image", type=click.Path(), required=True)
@guarded
def interactive(
    config_path, seed, mock, out, run_id, no_ig, no_mw, k, cs_threshold,
    repetition_threshold, scorer, scorer_endpoint,
    character_image, background_image, mainplot_image,
) -> None:
    """Generate from three user-supplied images (vision description only)."""
    images = {
        "character": character_image,
        "background": background_image,
        "mainplot": mainplot_image,
    }
    missing = [path for path in images.values() if not os.path.isfile(path)]
    if missing:
        raise ConfigError(f"image file(s) not found: {missing}")
    if no_ig:
        raise ConfigError("--no-ig does not apply to interactive runs")
    cfg = _base_config(config_path)
    cfg = _apply_overrides(
        cfg, seed, mock, out, run_id, False, no_mw, ElementMode.USER_IMAGES.value,
        k, cs_threshold, repetition_threshold, scorer, scorer_endpoint,
    )
    cfg = replace(cfg, user_images=images)
    bundle_path = PipelineRunner(cfg).run()
    click.echo(str(bundle_path))


@main.command()
@click.argument("run_id")
@click.option("--out", type=click.Path(), default="runs")
@guarded
def resume(run_id: str, out: str) -> None:
    """Continue an interrupted run from its last checkpoint."""
    cfg = resume_config(out, run_id)
    bundle_path = PipelineRunner(cfg).run(resume=True)
    click.echo(str(bundle_path))


@main.command()
@click.option("--corpus", "corpus_dir", type=click.Path(), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--target-words", type=int, default=200)
@click.option("--negatives-per-golden", type=int, default=1)
@click.option("--hard-fraction", type=float, default=0.5)
@click.option("--seed", type=int, default=0)
@click.option("--counts", default="1000,100,100", help="train,dev,test story counts")
@guarded
def csdata(corpus_dir, out_dir, target_words, negatives_per_golden, hard_fraction, seed, counts) -> None:
    """Build the continuation-score dataset (JSONL + stats) from a story corpus."""
    try:
        count_tuple = tuple(int(x) for x in counts.split(","))
        if len(count_tuple) != 3:
            raise ValueError
    except ValueError:
        raise ConfigError(f"--counts must be three integers, got {counts!r}")
    stories, skipped = load_corpus_dir(corpus_dir)
    if not stories:
        raise ConfigError(f"no usable stories in {corpus_dir}")
    examples, stats = build_dataset(
        stories,
        target_words=target_words,
        negatives_per_golden=negatives_per_golden,
        hard_fraction=hard_fraction,
        counts=count_tuple,  # type: ignore[arg-type]
        rng_seed=seed,
    )
    stats["stories_skipped_unreadable"] = skipped
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_dataset(examples, out / "dataset.jsonl")
    with open(out / "stats.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, sort_keys=True, indent=2)
        fh.write("\n")
    click.echo(f"{out / 'dataset.jsonl'} ({len(examples)} examples)")


def _eval_providers(mock: bool, seed: int, config_path: str | None) -> ProviderSet:
    if mock or not config_path:
        return mock_provider_set(seed)
    cfg = PipelineConfig.from_file(config_path)
    if cfg.mock or not cfg.providers:
        return mock_provider_set(cfg.seed or seed)
    return http_provider_set(cfg.providers)


def _load_text_corpus(corpus_dir: str, role: CorpusRole) -> Corpus:
    stories, _ = load_corpus_dir(corpus_dir)
    return Corpus(items=tuple((s.id, s.text) for s in stories), role=role)


@main.command(name="eval")
@click.option("--corpus", "corpus_dir", type=click.Path(), required=True)
@click.option("--metric", type=click.Choice(METRIC_CHOICES), required=True)
@click.option("--report", "report_path", type=click.Path(), required=True)
@click.option("--csv", "csv_path", type=click.Path(), default=None,
              help="Append a comparison-table row to this CSV.")
@click.option("--ws-ngrams", default=None,
              help="Comma-separated n-gram orders for ws (default 1,2,3).")
@click.option("--mock", is_flag=True)
@click.option("--seed", type=int, default=0)
@click.option("--config", "config_path", type=click.Path(), default=None)
@guarded
def eval_cmd(corpus_dir, metric, report_path, csv_path, ws_ngrams, mock, seed, config_path) -> None:
    """Compute one metric over a corpus directory.

    ws/ss read *.txt items; sim reads *.txt full stories; embrv/llmrv read
    *.json story bundles (persona vs final story, averaged over bundles).
    """
    orders = DEFAULT_NGRAM_ORDERS
    if ws_ngrams:
        try:
            orders = tuple(int(x) for x in ws_ngrams.split(","))
        except ValueError:
            raise ConfigError(f"--ws-ngrams must be integers, got {ws_ngrams!r}")
        if not orders or any(n < 1 for n in orders):
            raise ConfigError("--ws-ngrams orders must be >= 1")
    providers = _eval_providers(mock, seed, config_path)
    report = MetricsReport(ngram_orders=orders)
    items = 0

    if metric in ("ws", "ss", "sim"):
        role = CorpusRole.FULL_STORY if metric == "sim" else CorpusRole.ELEMENT
        corpus = _load_text_corpus(corpus_dir, role)
        items = len(corpus.items)
        if metric == "ws":
            report.per_ngram = ngram_averages(corpus, orders)
            report.ws = word_similarity(corpus, orders)
            value = report.ws
        elif metric == "ss":
            report.ss = sentence_similarity(corpus, providers.embedding)
            report.embedder_model = _embedder_id(providers)
            value = report.ss
        else:
            report.similarity = story_similarity(corpus, providers.embedding)
            report.embedder_model = _embedder_id(providers)
            value = report.similarity
    else:
        bundles = sorted(Path(corpus_dir).glob("*.json"))
        if not bundles:
            raise ConfigError(f"no bundle .json files in {corpus_dir}")
        items = len(bundles)
        values = []
        for path in bundles:
            bundle = load_bundle(path)
            persona = bundle.current_persona()
            story = bundle.final_story()
            if metric == "embrv":
                values.append(embedding_relevance(persona, story, providers.embedding))
            else:
                values.append(llm_relevance(persona, story, providers.chat))
        value = sum(values) / len(values)
        if metric == "embrv":
            report.emb_rv = value
            report.embedder_model = _embedder_id(providers)
        else:
            report.llm_rv = value

    payload = {"metric": metric, "corpus": str(corpus_dir), "items": items}
    payload.update(report.to_dict())
    with open(report_path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, sort_keys=True, indent=2)
        fh.write("\n")
    if csv_path:
        _append_csv_row(csv_path, str(corpus_dir), metric, value, orders, report.embedder_model)
    click.echo(f"{metric} = {value:.6f}")


def _embedder_id(providers: ProviderSet) -> str:
    return type(providers.embedding).__name__


def _append_csv_row(csv_path, corpus_dir, metric, value, orders, embedder) -> None:
    path = Path(csv_path)
    new_file = not path.exists()
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if new_file:
            writer.writerow(["corpus", "metric", "value", "ngram_orders", "embedder_model"])
        writer.writerow([corpus_dir, metric, f"{value:.6f}", " ".join(map(str, orders)), embedder])


if __name__ == "__main__":
    main()
