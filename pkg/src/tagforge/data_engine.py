"""The tagging data engine: merge generated annotations into the parsed set,
then remove suspect tags by per-category region clustering and by
region-level prediction filtering.

Stages run in a fixed order: parse -> generate -> clean -> filter. Generation
only adds, cleaning only removes, and every addition or removal lands in the
audit log, so replaying the audit over the parsed baseline reproduces the
final annotation set exactly. Per-category randomness is derived from
(seed, tag_id), making results independent of category processing order.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .caption_parser import LexiconBundle, load_lexicons, parse_corpus_file
from .clustering import kmeanspp_init, lloyd
from .config import EngineConfig
from .embedding_store import EmbeddingTable, load_embeddings, normalize
from .errors import TagforgeError
from .label_system import TagVocabulary, load_vocabulary, map_tag
from .rng import derive_seed
from .similarity_tagger import (
    LabelQueryMatrix,
    ThresholdProfile,
    load_label_queries,
    load_threshold_profile,
)

PROV_PARSED = "parsed"
PROV_GENERATED = "generated"
PROV_SEED = "seed"

STATE_KEPT = "kept"
STATE_REMOVED_OUTLIER = "removed_outlier"
STATE_REMOVED_NO_PREDICTION = "removed_no_prediction"
STATE_REMOVED_CONTRARY = "removed_contrary"

REASON_OUTLIER = "outlier"
REASON_NO_PREDICTION = "no_prediction"
REASON_CONTRARY = "contrary"

STAGE_PARSE = "parse"
STAGE_GENERATE = "generate"
STAGE_CLEAN = "clean"
STAGE_FILTER = "filter"

DEFAULT_MIN_REGIONS = 20
DEFAULT_FRACTION = 0.10
DEFAULT_MARGIN = 0.05

# ceil(fraction * n) computed on the real product; the epsilon absorbs float
# representation error in fraction * n (e.g. 0.1 * 300 -> 30.000000000000004)
_CEIL_EPS = 1e-9


class EngineError(TagforgeError):
    def __init__(self, stage: str, message: str, partial_stats: "EngineStats | None" = None):
        self.stage = stage
        self.partial_stats = partial_stats
        super().__init__(f"engine stage {stage!r} failed: {message}")


@dataclass
class TagEntry:
    provenance: str
    state: str = STATE_KEPT


# image_id -> {tag_id -> TagEntry}
AnnotationStore = dict[str, dict[int, TagEntry]]


@dataclass(frozen=True)
class RegionRecord:
    image_id: str
    region_id: str
    tag_id: int
    detector_score: float
    embedding_key: str


@dataclass
class AuditEvent:
    image_id: str
    tag_id: int
    action: str  # "added" | "removed"
    reason: str
    stage: str


@dataclass
class StageStats:
    stage: str
    images: int
    tags: int
    added: int = 0
    removed: dict[str, int] = field(default_factory=dict)

    @property
    def removed_total(self) -> int:
        return sum(self.removed.values())


@dataclass
class EngineStats:
    rows: list[StageStats] = field(default_factory=list)

    def validate_conservation(self) -> None:
        """tags_out == tags_in + additions - removals, exactly, per stage."""
        previous = 0
        for row in self.rows:
            expected = previous + row.added - row.removed_total
            if row.tags != expected:
                raise EngineError(
                    row.stage,
                    f"conservation violated: {previous} + {row.added} - "
                    f"{row.removed_total} != {row.tags}",
                )
            previous = row.tags


def count_kept(store: AnnotationStore) -> int:
    return sum(1 for tags in store.values() for e in tags.values() if e.state == STATE_KEPT)


def images_with_kept(store: AnnotationStore) -> int:
    return sum(1 for tags in store.values() if any(e.state == STATE_KEPT for e in tags.values()))


def kept_pairs(store: AnnotationStore) -> set[tuple[str, int]]:
    return {
        (image_id, tag_id)
        for image_id, tags in store.items()
        for tag_id, e in tags.items()
        if e.state == STATE_KEPT
    }


def _stage_row(stage: str, store: AnnotationStore, added: int = 0, removed: dict | None = None):
    return StageStats(
        stage=stage,
        images=images_with_kept(store),
        tags=count_kept(store),
        added=added,
        removed=dict(removed or {}),
    )


# -- generation ---------------------------------------------------------------


def generate_merge(
    parsed: AnnotationStore,
    generated_tag_records: Iterable[tuple[str, Sequence[int]]],
    generated_caption_tags: Mapping[str, Iterable[int]],
    valid_tag_ids: set[int],
) -> tuple[AnnotationStore, list[AuditEvent], int]:
    """Union generated tags into the parsed set.

    Tags already present keep their provenance; new ones are marked
    generated. A generated-tag record naming an unknown tag_id is rejected
    whole and counted. Never removes anything.
    """
    merged: AnnotationStore = {
        image_id: {tag_id: TagEntry(e.provenance, e.state) for tag_id, e in tags.items()}
        for image_id, tags in parsed.items()
    }
    additions: list[tuple[str, int]] = []
    rejected = 0

    def add(image_id: str, tag_id: int) -> None:
        tags = merged.setdefault(image_id, {})
        if tag_id not in tags:
            tags[tag_id] = TagEntry(PROV_GENERATED)
            additions.append((image_id, tag_id))

    for image_id, tag_ids in generated_tag_records:
        if any(tag_id not in valid_tag_ids for tag_id in tag_ids):
            rejected += 1
            continue
        for tag_id in tag_ids:
            add(image_id, tag_id)

    for image_id, tag_ids in generated_caption_tags.items():
        for tag_id in tag_ids:
            add(image_id, tag_id)

    audit = [
        AuditEvent(image_id, tag_id, "added", PROV_GENERATED, STAGE_GENERATE)
        for image_id, tag_id in sorted(additions)
    ]
    return merged, audit, rejected


# -- cleaning -----------------------------------------------------------------


def cluster_count(n_regions: int) -> int:
    """k heuristic: clamp(round(sqrt(n/2)), 1, 8)."""
    return max(1, min(8, int(round(math.sqrt(n_regions / 2)))))


@dataclass
class CategoryCleanResult:
    tag_id: int
    region_count: int
    k: int
    skipped: bool
    outlier_regions: list[tuple[str, str]] = field(default_factory=list)
    removed_pairs: list[tuple[str, int]] = field(default_factory=list)


OUTLIER_SCOPE_CATEGORY = "category"
OUTLIER_SCOPE_CLUSTER = "cluster"


def _ceil_fraction(fraction: float, n: int) -> int:
    return math.ceil(fraction * n - _CEIL_EPS) if fraction > 0 and n > 0 else 0


def clean_category(
    tag_id: int,
    regions: Sequence[RegionRecord],
    region_embeddings: EmbeddingTable,
    fraction: float,
    seed: int,
    min_regions: int = DEFAULT_MIN_REGIONS,
    tol: float = 1e-4,
    max_iter: int = 100,
    outlier_scope: str = OUTLIER_SCOPE_CATEGORY,
) -> CategoryCleanResult:
    """Cluster one category's regions and mark the farthest fraction as
    outliers.

    With the default "category" scope, exactly ceil(fraction * n) regions
    are marked (distance to assigned centroid descending, ties by
    (image_id, region_id) ascending). The "cluster" scope instead marks
    ceil(fraction * cluster size) within each cluster. An (image, tag) pair
    is removed only when every region supporting it is an outlier.
    Categories under min_regions are skipped.
    """
    if not 0.0 <= fraction < 1.0:
        raise ValueError("fraction must be in [0, 1)")
    if outlier_scope not in (OUTLIER_SCOPE_CATEGORY, OUTLIER_SCOPE_CLUSTER):
        raise ValueError(f"unknown outlier scope {outlier_scope!r}")
    regs = sorted(regions, key=lambda r: (r.image_id, r.region_id))
    n = len(regs)
    if n < min_regions:
        return CategoryCleanResult(tag_id, n, 0, skipped=True)

    missing = [r.embedding_key for r in regs if r.embedding_key not in region_embeddings]
    if missing:
        raise EngineError(
            STAGE_CLEAN,
            f"category {tag_id}: unresolvable embedding keys: {missing[:5]}"
            + ("" if len(missing) <= 5 else f" (+{len(missing) - 5} more)"),
        )
    points = np.asarray([region_embeddings.vector(r.embedding_key) for r in regs])

    k = cluster_count(n)
    k = min(k, np.unique(points, axis=0).shape[0])
    category_seed = derive_seed(seed, tag_id)
    result = lloyd(points, kmeanspp_init(points, k, category_seed), max_iter=max_iter, tol=tol)

    def ranked(indices):
        return sorted(
            indices, key=lambda i: (-result.distances[i], regs[i].image_id, regs[i].region_id)
        )

    if outlier_scope == OUTLIER_SCOPE_CATEGORY:
        outlier_idx = set(ranked(range(n))[: _ceil_fraction(fraction, n)])
    else:
        outlier_idx = set()
        for cluster in range(k):
            members = [i for i in range(n) if result.assignment[i] == cluster]
            outlier_idx.update(ranked(members)[: _ceil_fraction(fraction, len(members))])

    by_image: dict[str, list[int]] = {}
    for i, r in enumerate(regs):
        by_image.setdefault(r.image_id, []).append(i)
    removed = [
        (image_id, tag_id)
        for image_id, idxs in sorted(by_image.items())
        if all(i in outlier_idx for i in idxs)
    ]
    return CategoryCleanResult(
        tag_id=tag_id,
        region_count=n,
        k=k,
        skipped=False,
        outlier_regions=[(regs[i].image_id, regs[i].region_id) for i in sorted(outlier_idx)],
        removed_pairs=removed,
    )


# -- prediction filter ---------------------------------------------------------


@dataclass
class FilterResult:
    removals: list[tuple[str, int, str]] = field(default_factory=list)
    skipped_pairs: list[tuple[str, int, str]] = field(default_factory=list)
    images_without_whole_embedding: int = 0


def prediction_filter(
    store: AnnotationStore,
    regions: Sequence[RegionRecord],
    region_embeddings: EmbeddingTable,
    whole_image_embeddings: EmbeddingTable | None,
    queries: LabelQueryMatrix,
    profile: ThresholdProfile,
    margin: float = DEFAULT_MARGIN,
    whitelist: set[int] | None = None,
) -> FilterResult:
    """Remove kept pairs whose regions never reach the tag's threshold.

    A pair with at least one region is removed_no_prediction when its best
    region score is below the effective threshold; it is removed_contrary
    instead when the whole image scores at or above threshold while every
    region stays below threshold - margin. Pairs without regions are never
    touched; pairs with unresolvable embeddings are skipped and reported.
    """
    row_of = {tag_id: i for i, tag_id in enumerate(queries.tag_ids)}
    regions_by_pair: dict[tuple[str, int], list[RegionRecord]] = {}
    for r in regions:
        regions_by_pair.setdefault((r.image_id, r.tag_id), []).append(r)

    result = FilterResult()
    images_missing_whole: set[str] = set()

    for image_id in sorted(store):
        for tag_id in sorted(store[image_id]):
            entry = store[image_id][tag_id]
            if entry.state != STATE_KEPT:
                continue
            if whitelist is not None and tag_id not in whitelist:
                continue
            pair_regions = regions_by_pair.get((image_id, tag_id))
            if not pair_regions:
                continue
            if tag_id not in row_of:
                result.skipped_pairs.append((image_id, tag_id, "tag not in label queries"))
                continue
            missing = [
                r.embedding_key for r in pair_regions if r.embedding_key not in region_embeddings
            ]
            if missing:
                result.skipped_pairs.append(
                    (image_id, tag_id, f"missing region embedding {missing[0]!r}")
                )
                continue
            query = queries.matrix[row_of[tag_id]]
            region_scores = [
                float(region_embeddings.vector(r.embedding_key) @ query) for r in pair_regions
            ]
            threshold = profile.effective(tag_id)
            if max(region_scores) >= threshold:
                continue
            reason = REASON_NO_PREDICTION
            if whole_image_embeddings is not None and image_id in whole_image_embeddings:
                whole = float(whole_image_embeddings.vector(image_id) @ query)
                if whole >= threshold and all(s < threshold - margin for s in region_scores):
                    reason = REASON_CONTRARY
            elif whole_image_embeddings is not None:
                images_missing_whole.add(image_id)
            result.removals.append((image_id, tag_id, reason))
    result.images_without_whole_embedding = len(images_missing_whole)
    return result


def apply_removals(
    store: AnnotationStore,
    removals: Iterable[tuple[str, int, str]],
    stage: str,
) -> tuple[list[AuditEvent], dict[str, int]]:
    reason_to_state = {
        REASON_OUTLIER: STATE_REMOVED_OUTLIER,
        REASON_NO_PREDICTION: STATE_REMOVED_NO_PREDICTION,
        REASON_CONTRARY: STATE_REMOVED_CONTRARY,
    }
    events = []
    counts: dict[str, int] = {}
    for image_id, tag_id, reason in sorted(removals):
        entry = store.get(image_id, {}).get(tag_id)
        if entry is None or entry.state != STATE_KEPT:
            continue
        entry.state = reason_to_state[reason]
        counts[reason] = counts.get(reason, 0) + 1
        events.append(AuditEvent(image_id, tag_id, "removed", reason, stage))
    return events, counts


# -- full pipeline --------------------------------------------------------------


@dataclass
class EngineResult:
    parsed: AnnotationStore
    final: AnnotationStore
    stats: EngineStats
    audit: list[AuditEvent]
    unmapped_surfaces: int
    rejected_generated: int
    filter_skipped: list[tuple[str, int, str]]


def _store_from_tag_ids(
    records: Iterable[tuple[str, Sequence[int]]], provenance: str, valid: set[int]
) -> tuple[AnnotationStore, int]:
    store: AnnotationStore = {}
    rejected = 0
    for image_id, tag_ids in records:
        if any(t not in valid for t in tag_ids):
            rejected += 1
            continue
        tags = store.setdefault(image_id, {})
        for tag_id in tag_ids:
            tags.setdefault(tag_id, TagEntry(provenance))
    return store, rejected


def load_tag_id_records(path: str | Path) -> list[tuple[str, list[int]]]:
    """JSONL of {"image_id": ..., "tag_ids": [...]}."""
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            out.append((obj["image_id"], [int(t) for t in obj["tag_ids"]]))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise TagforgeError(f"{path}:{lineno}: malformed tag-id record") from None
    return out


def load_regions(path: str | Path) -> list[RegionRecord]:
    regions = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            record = RegionRecord(
                image_id=str(obj["image_id"]),
                region_id=str(obj["region_id"]),
                tag_id=int(obj["tag_id"]),
                detector_score=float(obj["score"]),
                embedding_key=str(obj["embedding_key"]),
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise TagforgeError(f"{path}:{lineno}: malformed region record") from None
        if not 0.0 <= record.detector_score <= 1.0:
            raise TagforgeError(f"{path}:{lineno}: detector score outside [0, 1]")
        regions.append(record)
    return regions


def load_whitelist(path: str | Path) -> set[int]:
    out = set()
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        try:
            out.add(int(text))
        except ValueError:
            raise TagforgeError(f"{path}:{lineno}: bad tag_id {text!r}") from None
    return out


def _parse_stage(
    config: EngineConfig, vocab: TagVocabulary, lexicons: LexiconBundle
) -> tuple[AnnotationStore, int]:
    corpus = parse_corpus_file(config.captions, config.lexicon_dir, workers=config.workers)
    store: AnnotationStore = {}
    unmapped = 0
    for image_id in sorted(corpus.image_tags):
        tags: dict[int, TagEntry] = {}
        for parsed_tag in corpus.image_tags[image_id]:
            tag_id = map_tag(parsed_tag.surface, vocab, lexicons)
            if tag_id is None:
                unmapped += 1
            else:
                tags.setdefault(tag_id, TagEntry(PROV_PARSED))
        if tags:
            store[image_id] = tags

    if config.seed_annotations is not None:
        records = load_tag_id_records(config.seed_annotations)
        valid = set(vocab.tag_ids())
        for image_id, tag_ids in records:
            tags = store.setdefault(image_id, {})
            for tag_id in tag_ids:
                if tag_id in valid:
                    tags.setdefault(tag_id, TagEntry(PROV_SEED))
                else:
                    unmapped += 1
    return store, unmapped


def run_engine(config: EngineConfig, write_outputs: bool = True) -> EngineResult:
    """Execute parse -> generate -> clean -> filter and collect accounting.

    Writes parsed/merged/final annotation JSONL, the audit log, and the stats
    table into config.out_dir unless write_outputs is False. Any stage error
    aborts with the stage name and the stats accumulated so far.
    """
    stats = EngineStats()
    audit: list[AuditEvent] = []

    def fail(stage: str, exc: Exception) -> EngineError:
        if isinstance(exc, EngineError):
            exc.partial_stats = stats
            return exc
        return EngineError(stage, str(exc), partial_stats=stats)

    # stage: parse
    try:
        vocab = load_vocabulary(config.vocab)
        lexicons = load_lexicons(config.lexicon_dir)
        parsed, unmapped = _parse_stage(config, vocab, lexicons)
        stats.rows.append(_stage_row(STAGE_PARSE, parsed, added=count_kept(parsed)))
    except EngineError:
        raise
    except Exception as exc:
        raise fail(STAGE_PARSE, exc) from exc

    # stage: generate
    try:
        valid = set(vocab.tag_ids())
        generated_records: list[tuple[str, list[int]]] = []
        for path in config.generated_tags:
            generated_records.extend(load_tag_id_records(path))
        generated_caption_tags: dict[str, set[int]] = {}
        for path in config.generated_captions:
            corpus = parse_corpus_file(path, config.lexicon_dir, workers=config.workers)
            for image_id, tags in corpus.image_tags.items():
                ids = {
                    tid
                    for tid in (map_tag(t.surface, vocab, lexicons) for t in tags)
                    if tid is not None
                }
                if ids:
                    generated_caption_tags.setdefault(image_id, set()).update(ids)
        merged, gen_audit, rejected = generate_merge(
            parsed, generated_records, generated_caption_tags, valid
        )
        audit.extend(gen_audit)
        stats.rows.append(_stage_row(STAGE_GENERATE, merged, added=len(gen_audit)))
    except Exception as exc:
        raise fail(STAGE_GENERATE, exc) from exc

    # stage: clean
    try:
        regions = load_regions(config.regions)
        region_table = normalize(load_embeddings(config.region_embeddings))
        whitelist = load_whitelist(config.whitelist) if config.whitelist else None
        by_tag: dict[int, list[RegionRecord]] = {}
        for r in regions:
            by_tag.setdefault(r.tag_id, []).append(r)
        category_ids = sorted(by_tag) if whitelist is None else sorted(set(by_tag) & whitelist)
        removals: list[tuple[str, int, str]] = []
        for tag_id in category_ids:
            category_result = clean_category(
                tag_id,
                by_tag[tag_id],
                region_table,
                fraction=config.fraction,
                seed=config.seed,
                min_regions=config.min_regions,
                tol=config.tol,
                max_iter=config.max_iter,
                outlier_scope=config.outlier_scope,
            )
            removals.extend(
                (img, tid, REASON_OUTLIER) for img, tid in category_result.removed_pairs
            )
        clean_events, clean_counts = apply_removals(merged, removals, STAGE_CLEAN)
        audit.extend(clean_events)
        stats.rows.append(_stage_row(STAGE_CLEAN, merged, removed=clean_counts))
    except Exception as exc:
        raise fail(STAGE_CLEAN, exc) from exc

    # stage: filter
    try:
        queries = load_label_queries(config.queries, vocab)
        profile = (
            load_threshold_profile(config.thresholds)
            if config.thresholds
            else ThresholdProfile()
        )
        profile.validate_against(queries.tag_ids)
        whole = (
            normalize(load_embeddings(config.image_embeddings))
            if config.image_embeddings
            else None
        )
        outcome = prediction_filter(
            merged, regions, region_table, whole, queries, profile,
            margin=config.margin, whitelist=whitelist,
        )
        filter_events, filter_counts = apply_removals(merged, outcome.removals, STAGE_FILTER)
        audit.extend(filter_events)
        stats.rows.append(_stage_row(STAGE_FILTER, merged, removed=filter_counts))
    except Exception as exc:
        raise fail(STAGE_FILTER, exc) from exc

    stats.validate_conservation()
    result = EngineResult(
        parsed=parsed,
        final=merged,
        stats=stats,
        audit=audit,
        unmapped_surfaces=unmapped,
        rejected_generated=rejected,
        filter_skipped=outcome.skipped_pairs,
    )
    if write_outputs:
        out_dir = Path(config.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        write_annotations(parsed, out_dir / "parsed.jsonl")
        write_annotations(merged, out_dir / "final.jsonl")
        write_audit(audit, out_dir / "audit.jsonl")
        write_stats(stats, out_dir / "stats.tsv")
    return result


# -- file formats ---------------------------------------------------------------


def write_annotations(store: AnnotationStore, path: str | Path) -> None:
    """Write kept annotations as JSONL; removals live in the audit log."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_id in sorted(store):
            tags = [
                {"tag_id": tag_id, "provenance": e.provenance}
                for tag_id, e in sorted(store[image_id].items())
                if e.state == STATE_KEPT
            ]
            if tags:
                fh.write(json.dumps({"image_id": image_id, "tags": tags}, ensure_ascii=False))
                fh.write("\n")


def load_annotations(path: str | Path) -> AnnotationStore:
    store: AnnotationStore = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            tags = {
                int(t["tag_id"]): TagEntry(t.get("provenance", PROV_PARSED))
                for t in obj["tags"]
            }
            store[obj["image_id"]] = tags
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise TagforgeError(f"{path}:{lineno}: malformed annotation record") from None
    return store


def write_audit(events: Sequence[AuditEvent], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for e in events:
            fh.write(
                json.dumps(
                    {
                        "image_id": e.image_id,
                        "tag_id": e.tag_id,
                        "action": e.action,
                        "reason": e.reason,
                        "stage": e.stage,
                    },
                    ensure_ascii=False,
                )
            )
            fh.write("\n")


def load_audit(path: str | Path) -> list[AuditEvent]:
    events = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            events.append(
                AuditEvent(
                    obj["image_id"], int(obj["tag_id"]), obj["action"], obj["reason"], obj["stage"]
                )
            )
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise TagforgeError(f"{path}:{lineno}: malformed audit record") from None
    return events


def replay_audit(parsed: AnnotationStore, events: Sequence[AuditEvent]) -> set[tuple[str, int]]:
    """Apply audited additions and removals over the parsed baseline."""
    current = kept_pairs(parsed)
    for e in events:
        if e.action == "added":
            current.add((e.image_id, e.tag_id))
        elif e.action == "removed":
            current.discard((e.image_id, e.tag_id))
        else:
            raise TagforgeError(f"unknown audit action {e.action!r}")
    return current


STATS_HEADER = "#tagforge-engine-stats v1"
_STATS_COLUMNS = (
    "stage",
    "images",
    "tags",
    "added",
    "removed_outlier",
    "removed_no_prediction",
    "removed_contrary",
)


def write_stats(stats: EngineStats, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(STATS_HEADER + "\n")
        fh.write("\t".join(_STATS_COLUMNS) + "\n")
        for row in stats.rows:
            fh.write(
                "\t".join(
                    str(v)
                    for v in (
                        row.stage,
                        row.images,
                        row.tags,
                        row.added,
                        row.removed.get(REASON_OUTLIER, 0),
                        row.removed.get(REASON_NO_PREDICTION, 0),
                        row.removed.get(REASON_CONTRARY, 0),
                    )
                )
                + "\n"
            )


def load_stats(path: str | Path) -> EngineStats:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines or lines[0] != STATS_HEADER:
        raise TagforgeError(f"{path}: missing header {STATS_HEADER!r}")
    if len(lines) < 2 or lines[1] != "\t".join(_STATS_COLUMNS):
        raise TagforgeError(f"{path}: missing column header")
    stats = EngineStats()
    for lineno, line in enumerate(lines[2:], 3):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != len(_STATS_COLUMNS):
            raise TagforgeError(f"{path}:{lineno}: expected {len(_STATS_COLUMNS)} columns")
        try:
            removed = {
                REASON_OUTLIER: int(parts[4]),
                REASON_NO_PREDICTION: int(parts[5]),
                REASON_CONTRARY: int(parts[6]),
            }
            removed = {k: v for k, v in removed.items() if v}
            stats.rows.append(
                StageStats(parts[0], int(parts[1]), int(parts[2]), int(parts[3]), removed)
            )
        except ValueError:
            raise TagforgeError(f"{path}:{lineno}: bad integer field") from None
    return stats
