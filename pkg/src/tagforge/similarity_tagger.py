"""Zero-shot tag scoring against prompt-ensembled label queries.

A label query is the renormalized mean of a tag's prompt embeddings, one per
template, so scores against unit-norm inputs are plain cosines. Scores are
raw cosines rather than a softmax over tags: tagging is multi-label and tags
must not compete with each other.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .embedding_store import EmbeddingTable, load_embeddings, save_embeddings
from .errors import TagforgeError
from .label_system import TagVocabulary

QUERY_NORM_TOLERANCE = 1e-6
PROMPT_NORM_TOLERANCE = 1e-4
DEFAULT_THRESHOLD = 0.2  # picked by calibrate_thresholds on synthetic validation data

PROMPT_KEY_SEPARATOR = "::"


class TaggerError(TagforgeError):
    pass


@dataclass
class LabelQueryMatrix:
    """One unit-norm query row per tag_id, rows in tag_id order."""

    vocab_version: str
    tag_ids: tuple[int, ...]
    canonicals: tuple[str, ...]
    matrix: np.ndarray

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.float64)
        if self.matrix.shape[0] != len(self.tag_ids) or len(self.tag_ids) != len(self.canonicals):
            raise TaggerError("tag_ids, canonicals and matrix rows must align")
        norms = np.linalg.norm(self.matrix, axis=1)
        off = np.abs(norms - 1.0) > QUERY_NORM_TOLERANCE
        if off.any():
            raise TaggerError(
                f"query row for tag {self.canonicals[int(np.argmax(off))]!r} is not unit norm"
            )

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


@dataclass
class ThresholdProfile:
    default_threshold: float = DEFAULT_THRESHOLD
    overrides: dict[int, float] = field(default_factory=dict)

    def effective(self, tag_id: int) -> float:
        return self.overrides.get(tag_id, self.default_threshold)

    def validate_against(self, tag_ids: Sequence[int]) -> None:
        known = set(tag_ids)
        unknown = sorted(set(self.overrides) - known)
        if unknown:
            raise TaggerError(f"threshold overrides reference unknown tag_ids: {unknown}")


def prompt_key(template: str, canonical: str) -> str:
    return f"{template}{PROMPT_KEY_SEPARATOR}{canonical}"


def build_label_queries(
    vocab: TagVocabulary,
    prompt_embeddings: EmbeddingTable,
    templates: Sequence[str],
) -> LabelQueryMatrix:
    """Ensemble each tag's per-template prompt embeddings into one query.

    Every (template, canonical) pair must resolve to a unit-norm vector under
    the key "template::canonical"; the mean vector is renormalized.
    """
    if not templates:
        raise TaggerError("template list is empty")
    tag_ids = vocab.tag_ids()
    canonicals = vocab.canonical_list()

    missing = [
        (t, c) for c in canonicals for t in templates if prompt_key(t, c) not in prompt_embeddings
    ]
    if missing:
        listing = ", ".join(f"{t!r}/{c!r}" for t, c in missing[:20])
        more = "" if len(missing) <= 20 else f" (+{len(missing) - 20} more)"
        raise TaggerError(f"missing prompt embeddings for (template, tag): {listing}{more}")

    rows = np.empty((len(tag_ids), prompt_embeddings.dim), dtype=np.float64)
    for i, canonical in enumerate(canonicals):
        prompts = np.asarray(
            [prompt_embeddings.vector(prompt_key(t, canonical)) for t in templates]
        )
        norms = np.linalg.norm(prompts, axis=1)
        off = np.abs(norms - 1.0) > PROMPT_NORM_TOLERANCE
        if off.any():
            bad = templates[int(np.argmax(off))]
            raise TaggerError(f"prompt embedding {prompt_key(bad, canonical)!r} is not unit norm")
        mean = prompts.mean(axis=0)
        norm = float(np.linalg.norm(mean))
        if norm < 1e-12:
            raise TaggerError(f"prompt ensemble for tag {canonical!r} has zero mean vector")
        rows[i] = mean / norm
    return LabelQueryMatrix(vocab.version, tuple(tag_ids), tuple(canonicals), rows)


def score(embedding: np.ndarray, queries: LabelQueryMatrix) -> np.ndarray:
    """Cosine score per tag: dot products against the query rows."""
    embedding = np.asarray(embedding, dtype=np.float64)
    if embedding.shape != (queries.dim,):
        raise TaggerError(
            f"dimension mismatch: embedding has shape {embedding.shape}, queries are {queries.dim}-d"
        )
    return queries.matrix @ embedding


def tag_image(
    embedding: np.ndarray, queries: LabelQueryMatrix, profile: ThresholdProfile
) -> set[int]:
    """Tag ids whose score reaches their effective threshold."""
    scores = score(embedding, queries)
    return {
        tag_id
        for tag_id, s in zip(queries.tag_ids, scores)
        if s >= profile.effective(tag_id)
    }


def _f1(tp: int, fp: int, fn: int) -> float:
    denom = 2 * tp + fp + fn
    return 2 * tp / denom if denom else 0.0


def calibrate_thresholds(
    scores_matrix: np.ndarray,
    labels_matrix: np.ndarray,
    tag_ids: Sequence[int],
    grid: Sequence[float],
) -> ThresholdProfile:
    """Grid-search thresholds on validation data.

    Per-tag threshold maximizes that tag's F1 (ties resolved toward the
    larger threshold); classes lacking a positive or a negative keep the
    default. The default is the grid value maximizing micro-F1 over all
    (image, class) cells.
    """
    if len(grid) == 0:
        raise TaggerError("threshold grid is empty")
    scores_matrix = np.asarray(scores_matrix, dtype=np.float64)
    labels_matrix = np.asarray(labels_matrix)
    if scores_matrix.shape != labels_matrix.shape:
        raise TaggerError("scores and labels must have identical shape")
    if scores_matrix.shape[1] != len(tag_ids):
        raise TaggerError("column count must match tag_ids")

    grid_sorted = sorted(set(float(g) for g in grid))
    positives = labels_matrix == 1

    best_default, best_default_f1 = grid_sorted[0], -1.0
    best_per_tag: dict[int, tuple[float, float]] = {}
    eligible = [
        c
        for c in range(len(tag_ids))
        if positives[:, c].any() and (~positives[:, c]).any()
    ]

    for t in grid_sorted:
        pred = scores_matrix >= t
        tp_all = int((pred & positives).sum())
        fp_all = int((pred & ~positives).sum())
        fn_all = int((~pred & positives).sum())
        micro = _f1(tp_all, fp_all, fn_all)
        if micro >= best_default_f1:
            best_default, best_default_f1 = t, micro
        for c in eligible:
            tp = int((pred[:, c] & positives[:, c]).sum())
            fp = int((pred[:, c] & ~positives[:, c]).sum())
            fn = int((~pred[:, c] & positives[:, c]).sum())
            f1 = _f1(tp, fp, fn)
            tag = tag_ids[c]
            if tag not in best_per_tag or f1 >= best_per_tag[tag][1]:
                best_per_tag[tag] = (t, f1)

    overrides = {tag: t for tag, (t, _) in best_per_tag.items()}
    return ThresholdProfile(default_threshold=best_default, overrides=overrides)


# -- persistence --------------------------------------------------------------


def save_label_queries(queries: LabelQueryMatrix, path: str | Path, templates: Sequence[str]) -> None:
    """EMB1 file keyed by canonical surface plus a JSON sidecar header."""
    table = EmbeddingTable(queries.canonicals, queries.matrix, normalized=True)
    save_embeddings(table, path)
    sidecar = {
        "vocab_version": queries.vocab_version,
        "templates": list(templates),
        "tag_ids": list(queries.tag_ids),
    }
    Path(str(path) + ".meta.json").write_text(
        json.dumps(sidecar, indent=2, ensure_ascii=False) + "\n", encoding="utf-8"
    )


def load_label_queries(path: str | Path, vocab: TagVocabulary) -> LabelQueryMatrix:
    sidecar_path = Path(str(path) + ".meta.json")
    if not sidecar_path.is_file():
        raise TaggerError(f"missing sidecar header {sidecar_path}")
    sidecar = json.loads(sidecar_path.read_text(encoding="utf-8"))
    if sidecar.get("vocab_version") != vocab.version:
        raise TaggerError(
            f"label queries were built for vocabulary version {sidecar.get('vocab_version')!r}, "
            f"loaded vocabulary is {vocab.version!r}"
        )
    table = load_embeddings(path)
    canonicals = vocab.canonical_list()
    if sorted(table.keys) != sorted(canonicals):
        raise TaggerError("label query keys do not match the vocabulary canonicals")
    rows = np.asarray([table.vector(c) for c in canonicals])
    return LabelQueryMatrix(vocab.version, tuple(vocab.tag_ids()), tuple(canonicals), rows)


def save_threshold_profile(profile: ThresholdProfile, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"*\t{profile.default_threshold!r}\n")
        for tag_id in sorted(profile.overrides):
            fh.write(f"{tag_id}\t{profile.overrides[tag_id]!r}\n")


def load_threshold_profile(path: str | Path) -> ThresholdProfile:
    default: float | None = None
    overrides: dict[int, float] = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split("\t")
        if len(parts) != 2:
            raise TaggerError(f"{path}:{lineno}: expected 'tag_id<TAB>threshold'")
        try:
            value = float(parts[1])
        except ValueError:
            raise TaggerError(f"{path}:{lineno}: bad threshold {parts[1]!r}") from None
        if not -1.0 <= value <= 1.0:
            raise TaggerError(f"{path}:{lineno}: threshold {value} outside [-1, 1]")
        if parts[0] == "*":
            default = value
        else:
            try:
                overrides[int(parts[0])] = value
            except ValueError:
                raise TaggerError(f"{path}:{lineno}: bad tag_id {parts[0]!r}") from None
    if default is None:
        raise TaggerError(f"{path}: missing '*' default threshold row")
    return ThresholdProfile(default_threshold=default, overrides=overrides)


def load_templates(path: str | Path) -> list[str]:
    """Prompt templates, one per line; '{tag}' marks the canonical slot."""
    templates = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        text = line.strip()
        if text and not text.startswith("#"):
            templates.append(text)
    if not templates:
        raise TaggerError(f"{path}: no templates found")
    return templates
