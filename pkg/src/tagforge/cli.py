"""Command-line interface tying the pipeline stages together.

Exit codes: 0 success, 1 data or validation error, 2 usage error. The
TAGFORGE_DATA_DIR environment variable overrides the packaged lexicon
directory; --lexicon-dir overrides both.
"""

from __future__ import annotations

import functools
import json
import sys
from pathlib import Path

import click

from . import __version__
from . import caption_parser as cp
from . import data_engine as engine
from . import label_system as ls
from . import metrics as mx
from . import similarity_tagger as st
from .config import build_engine_config, read_config_file
from .embedding_store import load_embeddings, normalize
from .errors import TagforgeError


def _data_errors(fn):
    """Map tagforge data errors to exit code 1 with a clean message."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except TagforgeError as exc:
            raise click.ClickException(str(exc)) from exc
        except (OSError, ValueError) as exc:
            raise click.ClickException(str(exc)) from exc

    return wrapper


def common_options(fn):
    fn = click.option(
        "--seed", type=int, default=None,
        help="Random seed [default: 0, or the config file's seed].",
    )(fn)
    fn = click.option(
        "--workers", type=int, default=None,
        help="Worker processes [default: 1, or the config file's workers].",
    )(fn)
    fn = click.option(
        "--config",
        "config_path",
        type=click.Path(exists=True, dir_okay=False),
        default=None,
        help="Key=value config file supplying defaults.",
    )(fn)
    return fn


def _config_values(config_path: str | None) -> tuple[dict[str, str], Path]:
    if config_path is None:
        return {}, Path(".")
    return read_config_file(config_path), Path(config_path).parent


@click.group()
@click.version_option(__version__)
def cli():
    """Caption parsing, tag vocabularies, data engine, and tagging metrics."""


@cli.command("parse")
@common_options
@click.option("--captions", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Input captions JSONL.")
@click.option("--out-tags", type=click.Path(dir_okay=False), required=True,
              help="Output per-image tags JSONL.")
@click.option("--out-freq", type=click.Path(dir_okay=False), required=True,
              help="Output frequency table TSV.")
@click.option("--lexicon-dir", type=click.Path(exists=True, file_okay=False), default=None,
              help="Lexicon directory (default: packaged data or TAGFORGE_DATA_DIR).")
@_data_errors
def parse_cmd(captions, out_tags, out_freq, lexicon_dir, seed, workers, config_path):
    """Parse a caption corpus into per-image tags and a frequency table."""
    corpus = cp.parse_corpus_file(captions, lexicon_dir, workers=workers or 1)
    cp.write_image_tags(corpus, out_tags)
    cp.write_frequency_table(corpus, out_freq)
    click.echo(
        f"parsed {len(corpus.image_tags)} images, {len(corpus.frequencies)} distinct surfaces, "
        f"{corpus.rejects.count} rejected records",
        err=True,
    )
    if corpus.rejects.count:
        for reason, count in sorted(corpus.rejects.reasons.items()):
            click.echo(f"  reject reason: {reason} ({count})", err=True)


@cli.command("build-vocab")
@common_options
@click.option("--freq", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Frequency table TSV from `parse`.")
@click.option("--k", "top_k", type=int, required=True, help="Keep the top-k frequent surfaces.")
@click.option("--seeds", type=click.Path(exists=True, dir_okay=False), multiple=True,
              help="Seed list file (one surface per line); repeatable.")
@click.option("--synonyms", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Synonym pairs TSV.")
@click.option("--excludes", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Excluded surfaces, one per line.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True,
              help="Output vocabulary file.")
@_data_errors
def build_vocab_cmd(freq, top_k, seeds, synonyms, excludes, out_path, seed, workers, config_path):
    """Build the tag vocabulary from corpus frequencies plus seed lists."""
    freq_table = cp.read_frequency_table(freq)
    seed_lists = [ls.load_surface_list(p) for p in seeds]
    synonym_lexicon = ls.load_synonyms(synonyms) if synonyms else None
    exclude_set = set(ls.load_surface_list(excludes)) if excludes else set()
    vocab = ls.build_label_system(freq_table, top_k, seed_lists, synonym_lexicon, exclude_set)
    ls.save_vocabulary(vocab, out_path)
    click.echo(
        f"vocabulary: {len(vocab)} surfaces, {vocab.num_groups} tag ids, version {vocab.version}",
        err=True,
    )


@cli.command("build-queries")
@common_options
@click.option("--vocab", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--prompts", type=click.Path(exists=True, dir_okay=False), required=True,
              help="EMB1 file of prompt embeddings keyed 'template::canonical'.")
@click.option("--templates", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Template list (default: packaged templates.txt).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True,
              help="Output label-query EMB1 file (sidecar written alongside).")
@_data_errors
def build_queries_cmd(vocab, prompts, templates, out_path, seed, workers, config_path):
    """Ensemble prompt embeddings into one label query per tag id."""
    vocabulary = ls.load_vocabulary(vocab)
    prompt_table = load_embeddings(prompts)
    template_path = Path(templates) if templates else cp.default_lexicon_dir() / "templates.txt"
    template_list = st.load_templates(template_path)
    queries = st.build_label_queries(vocabulary, prompt_table, template_list)
    st.save_label_queries(queries, out_path, template_list)
    click.echo(
        f"label queries: {len(queries.tag_ids)} tags x {queries.dim} dims, "
        f"{len(template_list)} templates",
        err=True,
    )


@cli.command("tag")
@common_options
@click.option("--embeddings", type=click.Path(exists=True, dir_okay=False), required=True,
              help="EMB1 file of image embeddings keyed by image_id.")
@click.option("--queries", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--vocab", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--thresholds", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Threshold profile TSV (default: flat 0.2).")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True,
              help="Output predictions JSONL with scores and selected tags.")
@_data_errors
def tag_cmd(embeddings, queries, vocab, thresholds, out_path, seed, workers, config_path):
    """Score image embeddings against the label queries and apply thresholds."""
    vocabulary = ls.load_vocabulary(vocab)
    query_matrix = st.load_label_queries(queries, vocabulary)
    profile = st.load_threshold_profile(thresholds) if thresholds else st.ThresholdProfile()
    profile.validate_against(query_matrix.tag_ids)
    table = normalize(load_embeddings(embeddings))
    with open(out_path, "w", encoding="utf-8") as fh:
        for key in sorted(table.keys):
            scores = st.score(table.vector(key), query_matrix)
            selected = sorted(
                tag_id
                for tag_id, s in zip(query_matrix.tag_ids, scores)
                if s >= profile.effective(tag_id)
            )
            fh.write(
                json.dumps(
                    {
                        "image_id": key,
                        "scores": {
                            str(tag_id): round(float(s), 6)
                            for tag_id, s in zip(query_matrix.tag_ids, scores)
                        },
                        "tags": selected,
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")
    click.echo(f"tagged {len(table)} embeddings", err=True)


@cli.group("engine")
def engine_group():
    """Data-engine stages: generate, clean, or the full run."""


def _engine_config(config_path, overrides):
    values, base = _config_values(config_path)
    return build_engine_config(values, base, overrides)


@engine_group.command("generate")
@common_options
@click.option("--annotations", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Parsed annotations JSONL.")
@click.option("--vocab", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--generated-tags", type=click.Path(exists=True, dir_okay=False), multiple=True,
              help="Generated tag-id JSONL; repeatable.")
@click.option("--generated-captions", type=click.Path(exists=True, dir_okay=False), multiple=True,
              help="Generated caption JSONL to parse; repeatable.")
@click.option("--lexicon-dir", type=click.Path(exists=True, file_okay=False), default=None)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--audit", "audit_path", type=click.Path(dir_okay=False), default=None,
              help="Audit JSONL of additions.")
@_data_errors
def engine_generate_cmd(
    annotations, vocab, generated_tags, generated_captions, lexicon_dir,
    out_path, audit_path, seed, workers, config_path,
):
    """Merge generated tags and parsed generated captions into the dataset."""
    store = engine.load_annotations(annotations)
    vocabulary = ls.load_vocabulary(vocab)
    lexicons = cp.load_lexicons(lexicon_dir)
    valid = set(vocabulary.tag_ids())
    records = []
    for path in generated_tags:
        records.extend(engine.load_tag_id_records(path))
    caption_tags: dict[str, set[int]] = {}
    for path in generated_captions:
        corpus = cp.parse_corpus_file(path, lexicon_dir, workers=workers or 1)
        for image_id, tags in corpus.image_tags.items():
            ids = {
                tid
                for tid in (ls.map_tag(t.surface, vocabulary, lexicons) for t in tags)
                if tid is not None
            }
            if ids:
                caption_tags.setdefault(image_id, set()).update(ids)
    merged, audit, rejected = engine.generate_merge(store, records, caption_tags, valid)
    engine.write_annotations(merged, out_path)
    if audit_path:
        engine.write_audit(audit, audit_path)
    click.echo(
        f"generation: +{len(audit)} tags, {rejected} rejected records, "
        f"{engine.count_kept(merged)} total", err=True,
    )


@engine_group.command("clean")
@common_options
@click.option("--annotations", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--vocab", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--regions", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--region-embeddings", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--queries", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--image-embeddings", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--thresholds", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--whitelist", type=click.Path(exists=True, dir_okay=False), default=None,
              help="tag_ids eligible for cleaning, one per line (default: all with regions).")
@click.option("--fraction", type=float, default=engine.DEFAULT_FRACTION, show_default=True,
              help="Outlier fraction per category.")
@click.option("--outlier-scope", type=click.Choice(["category", "cluster"]),
              default="category", show_default=True,
              help="Pool outlier ranking across the category or within each cluster.")
@click.option("--min-regions", type=int, default=engine.DEFAULT_MIN_REGIONS, show_default=True)
@click.option("--margin", type=float, default=engine.DEFAULT_MARGIN, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.option("--audit", "audit_path", type=click.Path(dir_okay=False), default=None)
@_data_errors
def engine_clean_cmd(
    annotations, vocab, regions, region_embeddings, queries, image_embeddings,
    thresholds, whitelist, fraction, outlier_scope, min_regions, margin,
    out_path, audit_path, seed, workers, config_path,
):
    """Run outlier cleaning and the prediction filter on an annotation set."""
    store = engine.load_annotations(annotations)
    vocabulary = ls.load_vocabulary(vocab)
    region_list = engine.load_regions(regions)
    region_table = normalize(load_embeddings(region_embeddings))
    query_matrix = st.load_label_queries(queries, vocabulary)
    profile = st.load_threshold_profile(thresholds) if thresholds else st.ThresholdProfile()
    profile.validate_against(query_matrix.tag_ids)
    whole = normalize(load_embeddings(image_embeddings)) if image_embeddings else None
    whitelist_set = engine.load_whitelist(whitelist) if whitelist else None

    by_tag: dict[int, list[engine.RegionRecord]] = {}
    for r in region_list:
        by_tag.setdefault(r.tag_id, []).append(r)
    category_ids = (
        sorted(by_tag) if whitelist_set is None else sorted(set(by_tag) & whitelist_set)
    )
    removals = []
    for tag_id in category_ids:
        outcome = engine.clean_category(
            tag_id, by_tag[tag_id], region_table,
            fraction=fraction, seed=seed if seed is not None else 0,
            min_regions=min_regions, outlier_scope=outlier_scope,
        )
        removals.extend((img, tid, engine.REASON_OUTLIER) for img, tid in outcome.removed_pairs)
    clean_events, _ = engine.apply_removals(store, removals, engine.STAGE_CLEAN)
    filter_outcome = engine.prediction_filter(
        store, region_list, region_table, whole, query_matrix, profile,
        margin=margin, whitelist=whitelist_set,
    )
    filter_events, _ = engine.apply_removals(
        store, filter_outcome.removals, engine.STAGE_FILTER
    )
    engine.write_annotations(store, out_path)
    if audit_path:
        engine.write_audit(clean_events + filter_events, audit_path)
    click.echo(
        f"cleaning: -{len(clean_events)} outlier, -{len(filter_events)} filtered, "
        f"{engine.count_kept(store)} kept", err=True,
    )


@engine_group.command("run")
@common_options
@click.option("--captions", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--vocab", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--regions", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--region-embeddings", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--queries", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--out-dir", type=click.Path(file_okay=False), default=None)
@click.option("--fraction", type=float, default=None, help="Outlier fraction per category.")
@click.option("--whitelist", type=click.Path(exists=True, dir_okay=False), default=None)
@_data_errors
def engine_run_cmd(
    captions, vocab, regions, region_embeddings, queries, out_dir, fraction,
    whitelist, seed, workers, config_path,
):
    """Run the full engine from a config file; flags override config keys."""
    def absolute(p):
        return str(Path(p).resolve()) if p is not None else None

    # flag paths are relative to the CWD, config paths to the config file
    overrides = {
        "captions": absolute(captions),
        "vocab": absolute(vocab),
        "regions": absolute(regions),
        "region_embeddings": absolute(region_embeddings),
        "queries": absolute(queries),
        "out_dir": absolute(out_dir),
        "fraction": fraction,
        "whitelist": absolute(whitelist),
        "workers": workers,
        "seed": seed,
    }
    values, base = _config_values(config_path)
    config = build_engine_config(values, base, overrides)
    result = engine.run_engine(config)
    for row in result.stats.rows:
        click.echo(
            f"{row.stage}\timages={row.images}\ttags={row.tags}\t"
            f"added={row.added}\tremoved={row.removed_total}"
        )
    click.echo(
        f"outputs in {config.out_dir} (final.jsonl, parsed.jsonl, audit.jsonl, stats.tsv)",
        err=True,
    )


@cli.command("eval")
@common_options
@click.option("--predictions", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--ground-truth", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--thresholds", type=click.Path(exists=True, dir_okay=False), default=None)
@click.option("--class-filter", type=click.Path(exists=True, dir_okay=False), default=None,
              help="Evaluate only tag_ids listed in this file.")
@click.option("--exclude-unannotated", is_flag=True, default=False, show_default=True,
              help="Exclude unannotated cells instead of treating them as negatives.")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), default=None,
              help="Write the per-class report TSV here.")
@_data_errors
def eval_cmd(
    predictions, ground_truth, thresholds, class_filter, exclude_unannotated,
    out_path, seed, workers, config_path,
):
    """Evaluate predictions: per-class AP, mAP, micro/macro P/R at threshold."""
    instances = mx.load_eval_instances(predictions, ground_truth)
    profile = st.load_threshold_profile(thresholds) if thresholds else st.ThresholdProfile()
    filter_set = engine.load_whitelist(class_filter) if class_filter else None
    report = mx.evaluate(
        instances, profile, filter_set, unannotated_as_negative=not exclude_unannotated
    )
    if out_path:
        mx.write_report(report, out_path)
    click.echo(f"mAP\t{report.mean_ap:.4f}  ({report.evaluated_classes} classes)")
    click.echo(f"micro P/R\t{report.micro_precision:.4f} / {report.micro_recall:.4f}")
    click.echo(f"macro P/R\t{report.macro_precision:.4f} / {report.macro_recall:.4f}")
    if report.skipped_classes:
        click.echo(f"skipped classes: {len(report.skipped_classes)}", err=True)


@cli.command("stats")
@common_options
@click.option("--stats-file", type=click.Path(exists=True, dir_okay=False), required=True,
              help="Engine stats TSV.")
@_data_errors
def stats_cmd(stats_file, seed, workers, config_path):
    """Render an engine stats table and verify its conservation identity."""
    stats = engine.load_stats(stats_file)
    stats.validate_conservation()
    width = max(len(r.stage) for r in stats.rows)
    click.echo(f"{'stage':<{width}}  {'images':>8}  {'tags':>10}  {'added':>8}  removals")
    for row in stats.rows:
        removed = (
            ", ".join(f"{k}={v}" for k, v in sorted(row.removed.items())) if row.removed else "-"
        )
        click.echo(
            f"{row.stage:<{width}}  {row.images:>8}  {row.tags:>10}  {row.added:>8}  {removed}"
        )
    click.echo("conservation: ok", err=True)


@cli.command("selftest")
@common_options
@click.option("--perf", "perf_captions", type=int, default=0, show_default=True,
              help="Also benchmark parsing over this many synthetic captions.")
@_data_errors
def selftest_cmd(perf_captions, seed, workers, config_path):
    """Run the built-in property suites; exits nonzero on failure."""
    from . import selftest

    ok = selftest.run_all(
        seed=seed if seed is not None else 20240901,
        perf_captions=perf_captions,
        workers=workers or 1,
    )
    if not ok:
        raise click.ClickException("selftest failed")


def main(argv=None):
    try:
        cli(args=argv, standalone_mode=True, prog_name="tagforge")
    except TagforgeError as exc:  # errors escaping the decorator (load-time etc.)
        click.echo(f"error: {exc}", err=True)
        sys.exit(1)


if __name__ == "__main__":
    main()
