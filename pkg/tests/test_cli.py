import json
from pathlib import Path

import numpy as np
import pytest
from click.testing import CliRunner

from tagforge.cli import cli
from tagforge.embedding_store import EmbeddingTable, save_embeddings
from tagforge.similarity_tagger import prompt_key

from engine_synth import build_synthetic_corpus

DATA = Path(__file__).parent / "data"


@pytest.fixture
def runner():
    return CliRunner()


def test_parse_matches_golden_bytes(runner, tmp_path):
    out_tags = tmp_path / "tags.jsonl"
    out_freq = tmp_path / "freq.tsv"
    result = runner.invoke(
        cli,
        [
            "parse",
            "--captions", str(DATA / "fixture_captions.jsonl"),
            "--out-tags", str(out_tags),
            "--out-freq", str(out_freq),
        ],
    )
    assert result.exit_code == 0, result.output
    assert out_tags.read_bytes() == (DATA / "fixture_tags.golden.jsonl").read_bytes()
    assert out_freq.read_bytes() == (DATA / "fixture_freq.golden.tsv").read_bytes()


def test_parse_worker_counts_byte_identical(runner, tmp_path):
    outputs = []
    for workers in (1, 8):
        out_tags = tmp_path / f"tags{workers}.jsonl"
        out_freq = tmp_path / f"freq{workers}.tsv"
        result = runner.invoke(
            cli,
            [
                "parse",
                "--captions", str(DATA / "fixture_captions.jsonl"),
                "--out-tags", str(out_tags),
                "--out-freq", str(out_freq),
                "--workers", str(workers),
            ],
        )
        assert result.exit_code == 0, result.output
        outputs.append((out_tags.read_bytes(), out_freq.read_bytes()))
    assert outputs[0] == outputs[1]


def test_unknown_subcommand_exits_2(runner):
    result = runner.invoke(cli, ["frobnicate"])
    assert result.exit_code == 2


def test_unknown_flag_exits_2(runner):
    result = runner.invoke(cli, ["parse", "--nonsense"])
    assert result.exit_code == 2


def test_missing_file_is_usage_error(runner, tmp_path):
    result = runner.invoke(
        cli,
        [
            "parse",
            "--captions", str(tmp_path / "absent.jsonl"),
            "--out-tags", str(tmp_path / "t.jsonl"),
            "--out-freq", str(tmp_path / "f.tsv"),
        ],
    )
    assert result.exit_code == 2


def test_data_error_exits_1(runner, tmp_path):
    bad_vocab = tmp_path / "vocab.tsv"
    bad_vocab.write_text("not a vocabulary file\n")
    result = runner.invoke(
        cli,
        [
            "tag",
            "--embeddings", str(DATA / "fixture_captions.jsonl"),
            "--queries", str(DATA / "fixture_captions.jsonl"),
            "--vocab", str(bad_vocab),
            "--out", str(tmp_path / "out.jsonl"),
        ],
    )
    assert result.exit_code == 1
    assert "vocab" in result.output.lower() or "header" in result.output.lower()


def test_engine_run_bad_config_key_exits_1(runner, tmp_path):
    config = tmp_path / "engine.cfg"
    config.write_text("unknown_key = 1\nseed = 3\n")
    result = runner.invoke(cli, ["engine", "run", "--config", str(config)])
    assert result.exit_code == 1
    assert "unknown_key" in result.output


def test_help_lists_flags_with_defaults(runner):
    for args in (
        ["--help"],
        ["parse", "--help"],
        ["build-vocab", "--help"],
        ["build-queries", "--help"],
        ["tag", "--help"],
        ["engine", "--help"],
        ["engine", "generate", "--help"],
        ["engine", "clean", "--help"],
        ["engine", "run", "--help"],
        ["eval", "--help"],
        ["stats", "--help"],
        ["selftest", "--help"],
    ):
        result = runner.invoke(cli, args)
        assert result.exit_code == 0, args
        assert "--help" in result.output
    clean_help = runner.invoke(cli, ["engine", "clean", "--help"]).output
    assert "0.1" in clean_help  # fraction default surfaced in help


def _unit_rows(rng, n, dim):
    raw = rng.normal(size=(n, dim))
    return raw / np.linalg.norm(raw, axis=1)[:, None]


def test_vocab_queries_tag_eval_round_trip(runner, tmp_path):
    """Drive build-vocab -> build-queries -> tag -> eval through the CLI."""
    rng = np.random.default_rng(40)
    freq = tmp_path / "freq.tsv"
    freq.write_text("dog\t9\ncat\t5\n")
    vocab_path = tmp_path / "vocab.tsv"
    result = runner.invoke(
        cli,
        ["build-vocab", "--freq", str(freq), "--k", "2", "--out", str(vocab_path)],
    )
    assert result.exit_code == 0, result.output

    templates = tmp_path / "templates.txt"
    templates.write_text("a photo of a {tag}\n")
    rows = _unit_rows(rng, 2, 8)
    prompts = {
        prompt_key("a photo of a {tag}", "cat"): rows[0],
        prompt_key("a photo of a {tag}", "dog"): rows[1],
    }
    prompts_path = tmp_path / "prompts.emb"
    save_embeddings(EmbeddingTable.from_vectors(prompts, normalized=True), prompts_path)
    queries_path = tmp_path / "queries.emb"
    result = runner.invoke(
        cli,
        [
            "build-queries",
            "--vocab", str(vocab_path),
            "--prompts", str(prompts_path),
            "--templates", str(templates),
            "--out", str(queries_path),
        ],
    )
    assert result.exit_code == 0, result.output

    # one image per class, exactly on the class query
    images_path = tmp_path / "images.emb"
    save_embeddings(
        EmbeddingTable.from_vectors(
            {"imgcat": rows[0], "imgdog": rows[1]}, normalized=True
        ),
        images_path,
    )
    predictions = tmp_path / "pred.jsonl"
    result = runner.invoke(
        cli,
        [
            "tag",
            "--embeddings", str(images_path),
            "--queries", str(queries_path),
            "--vocab", str(vocab_path),
            "--out", str(predictions),
        ],
    )
    assert result.exit_code == 0, result.output
    records = {
        obj["image_id"]: obj
        for obj in map(json.loads, predictions.read_text().splitlines())
    }
    assert records["imgcat"]["scores"]["0"] == 1.0  # cat is tag_id 0
    assert 0 in records["imgcat"]["tags"]

    gt = tmp_path / "gt.jsonl"
    gt.write_text(
        '{"image_id": "imgcat", "positive": [0], "negative": [1]}\n'
        '{"image_id": "imgdog", "positive": [1], "negative": [0]}\n'
    )
    report = tmp_path / "report.tsv"
    result = runner.invoke(
        cli,
        [
            "eval",
            "--predictions", str(predictions),
            "--ground-truth", str(gt),
            "--out", str(report),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "mAP\t1.0000" in result.output
    assert report.read_text().startswith("class_id\tap\n")


def test_engine_run_matches_staged_commands(runner, tmp_path):
    """`engine run` equals `engine generate` + `engine clean` on the same inputs."""
    corpus = build_synthetic_corpus(tmp_path / "c", n_images=60, seed=55)
    cfg = corpus.config
    out_dir = tmp_path / "out"
    config_file = tmp_path / "engine.cfg"
    config_file.write_text(
        f"captions = {cfg.captions}\n"
        f"vocab = {cfg.vocab}\n"
        f"regions = {cfg.regions}\n"
        f"region_embeddings = {cfg.region_embeddings}\n"
        f"queries = {cfg.queries}\n"
        f"image_embeddings = {cfg.image_embeddings}\n"
        f"generated_tags = {cfg.generated_tags[0]}\n"
        f"whitelist = {cfg.whitelist}\n"
        f"out_dir = {out_dir}\n"
        f"seed = {cfg.seed}\n"
    )
    result = runner.invoke(cli, ["engine", "run", "--config", str(config_file)])
    assert result.exit_code == 0, result.output
    for name in ("parsed.jsonl", "final.jsonl", "audit.jsonl", "stats.tsv"):
        assert (out_dir / name).is_file()
    assert "parse\t" in result.output and "filter\t" in result.output

    merged = tmp_path / "merged.jsonl"
    result = runner.invoke(
        cli,
        [
            "engine", "generate",
            "--annotations", str(out_dir / "parsed.jsonl"),
            "--vocab", str(cfg.vocab),
            "--generated-tags", str(cfg.generated_tags[0]),
            "--out", str(merged),
        ],
    )
    assert result.exit_code == 0, result.output

    cleaned = tmp_path / "cleaned.jsonl"
    result = runner.invoke(
        cli,
        [
            "engine", "clean",
            "--annotations", str(merged),
            "--vocab", str(cfg.vocab),
            "--regions", str(cfg.regions),
            "--region-embeddings", str(cfg.region_embeddings),
            "--queries", str(cfg.queries),
            "--image-embeddings", str(cfg.image_embeddings),
            "--whitelist", str(cfg.whitelist),
            "--seed", str(cfg.seed),
            "--out", str(cleaned),
        ],
    )
    assert result.exit_code == 0, result.output
    assert cleaned.read_bytes() == (out_dir / "final.jsonl").read_bytes()

    result = runner.invoke(cli, ["stats", "--stats-file", str(out_dir / "stats.tsv")])
    assert result.exit_code == 0, result.output


def test_stats_command_renders_and_validates(runner, tmp_path):
    stats_path = tmp_path / "stats.tsv"
    stats_path.write_text(
        "#tagforge-engine-stats v1\n"
        "stage\timages\ttags\tadded\tremoved_outlier\tremoved_no_prediction\tremoved_contrary\n"
        "parse\t5\t50\t50\t0\t0\t0\n"
        "generate\t6\t70\t20\t0\t0\t0\n"
        "clean\t6\t65\t0\t5\t0\t0\n"
        "filter\t6\t62\t0\t0\t2\t1\n"
    )
    result = runner.invoke(cli, ["stats", "--stats-file", str(stats_path)])
    assert result.exit_code == 0, result.output
    assert "parse" in result.output and "filter" in result.output

    stats_path.write_text(
        "#tagforge-engine-stats v1\n"
        "stage\timages\ttags\tadded\tremoved_outlier\tremoved_no_prediction\tremoved_contrary\n"
        "parse\t5\t50\t49\t0\t0\t0\n"
    )
    result = runner.invoke(cli, ["stats", "--stats-file", str(stats_path)])
    assert result.exit_code == 1
    assert "conservation" in result.output


def test_selftest_command(runner):
    result = runner.invoke(cli, ["selftest"])
    assert result.exit_code == 0, result.output
    assert "PASS" in result.output and "FAIL" not in result.output
