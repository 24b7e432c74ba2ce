"""Multi-label evaluation: per-class average precision, mAP, and
precision/recall at threshold.

AP is the non-interpolated variant: precision summed at each positive rank,
divided by the positive count, with ties broken stably by input order.
Unannotated ground truth defaults to negative; a flag excludes those cells
per class instead.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import TagforgeError
from .similarity_tagger import ThresholdProfile

LABEL_POSITIVE = 1
LABEL_NEGATIVE = 0
LABEL_UNANNOTATED = -1

MISSING_SCORE = -np.inf  # absent prediction ranks last and never crosses a threshold


class MetricsError(TagforgeError):
    pass


def average_precision(scores: Sequence[float], labels: Sequence[int]) -> float | None:
    """AP of one ranking; None signals "not evaluable" (no positives).

    Items are ranked by score descending, ties keeping input order. AP is
    (1/P) * sum over positive ranks k of precision@k.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise MetricsError("scores and labels must be congruent 1-d sequences")
    positives = int((labels == 1).sum())
    if positives == 0:
        return None
    order = np.argsort(-scores, kind="stable")
    ranked = labels[order] == 1
    cum_pos = np.cumsum(ranked)
    ranks = np.arange(1, len(ranked) + 1)
    return float((cum_pos[ranked] / ranks[ranked]).sum() / positives)


@dataclass
class EvalInstances:
    """Scores and {positive, negative, unannotated} labels per (image, class)."""

    image_ids: list[str]
    class_ids: list[int]
    scores: np.ndarray  # (n_images, n_classes) float64
    labels: np.ndarray  # (n_images, n_classes) int8: 1 / 0 / -1

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int8)
        if self.scores.shape != self.labels.shape:
            raise MetricsError("scores and labels must be congruent")
        if self.scores.shape != (len(self.image_ids), len(self.class_ids)):
            raise MetricsError("matrix shape must match image and class id counts")
        if len(self.class_ids) < 1:
            raise MetricsError("at least one class is required")


@dataclass
class EvalReport:
    per_class_ap: dict[int, float]
    mean_ap: float
    micro_precision: float
    micro_recall: float
    macro_precision: float
    macro_recall: float
    evaluated_classes: int
    skipped_classes: list[tuple[int, str]] = field(default_factory=list)


def mean_ap(
    instances: EvalInstances,
    class_filter: set[int] | None = None,
    unannotated_as_negative: bool = True,
) -> tuple[dict[int, float], float, list[tuple[int, str]]]:
    """Per-class AP and their unweighted mean over evaluable classes.

    Classes are skipped (and listed with a reason) when excluded by the
    filter or when they have no positives after unannotated handling.
    """
    per_class: dict[int, float] = {}
    skipped: list[tuple[int, str]] = []
    for c, class_id in enumerate(instances.class_ids):
        if class_filter is not None and class_id not in class_filter:
            skipped.append((class_id, "excluded by filter"))
            continue
        col_scores = instances.scores[:, c]
        col_labels = instances.labels[:, c]
        if unannotated_as_negative:
            binary = (col_labels == LABEL_POSITIVE).astype(np.int8)
        else:
            mask = col_labels != LABEL_UNANNOTATED
            col_scores = col_scores[mask]
            binary = (col_labels[mask] == LABEL_POSITIVE).astype(np.int8)
        ap = average_precision(col_scores, binary) if binary.size else None
        if ap is None:
            skipped.append((class_id, "no positives"))
        else:
            per_class[class_id] = ap
    if not per_class:
        raise MetricsError("all classes were skipped; nothing to evaluate")
    return per_class, float(np.mean(list(per_class.values()))), skipped


@dataclass
class PrecisionRecall:
    micro_precision: float
    micro_recall: float
    macro_precision: float
    macro_recall: float


def _ratio(num: int, denom: int) -> float:
    # 0/0 counts as perfect by convention (no predictions -> no mistakes)
    return num / denom if denom else 1.0


def precision_recall(
    instances: EvalInstances,
    profile: ThresholdProfile,
    unannotated_as_negative: bool = True,
) -> PrecisionRecall:
    """Micro and macro precision/recall at the profile's thresholds.

    Micro aggregates TP/FP/FN over every (image, class) cell. Macro averages
    per-class precision and recall over classes with at least one positive;
    a class with zero predicted positives contributes precision 1.
    """
    thresholds = np.asarray(
        [profile.effective(cid) for cid in instances.class_ids], dtype=np.float64
    )
    predicted = instances.scores >= thresholds[None, :]
    positive = instances.labels == LABEL_POSITIVE
    if unannotated_as_negative:
        counted = np.ones_like(predicted, dtype=bool)
    else:
        counted = instances.labels != LABEL_UNANNOTATED

    tp_cells = predicted & positive & counted
    fp_cells = predicted & ~positive & counted
    fn_cells = ~predicted & positive & counted

    micro_p = _ratio(int(tp_cells.sum()), int((tp_cells | fp_cells).sum()))
    micro_r = _ratio(int(tp_cells.sum()), int((tp_cells | fn_cells).sum()))

    macro_ps: list[float] = []
    macro_rs: list[float] = []
    for c in range(len(instances.class_ids)):
        pos = int((positive[:, c] & counted[:, c]).sum())
        if pos == 0:
            continue
        tp = int(tp_cells[:, c].sum())
        fp = int(fp_cells[:, c].sum())
        macro_ps.append(_ratio(tp, tp + fp))
        macro_rs.append(tp / pos)
    if not macro_ps:
        raise MetricsError("no class has a positive ground-truth label")
    return PrecisionRecall(
        micro_precision=micro_p,
        micro_recall=micro_r,
        macro_precision=float(np.mean(macro_ps)),
        macro_recall=float(np.mean(macro_rs)),
    )


def evaluate(
    instances: EvalInstances,
    profile: ThresholdProfile,
    class_filter: set[int] | None = None,
    unannotated_as_negative: bool = True,
) -> EvalReport:
    per_class, map_value, skipped = mean_ap(instances, class_filter, unannotated_as_negative)
    pr = precision_recall(instances, profile, unannotated_as_negative)
    return EvalReport(
        per_class_ap=per_class,
        mean_ap=map_value,
        micro_precision=pr.micro_precision,
        micro_recall=pr.micro_recall,
        macro_precision=pr.macro_precision,
        macro_recall=pr.macro_recall,
        evaluated_classes=len(per_class),
        skipped_classes=skipped,
    )


# -- file interfaces ----------------------------------------------------------


def load_eval_instances(predictions_path: str | Path, ground_truth_path: str | Path) -> EvalInstances:
    """Build the evaluation matrices from prediction and ground-truth JSONL.

    Predictions: {"image_id": ..., "scores": {tag_id: score}}.
    Ground truth: {"image_id": ..., "positive": [...], "negative": [...]};
    classes absent from both lists are unannotated. Repeated image_ids keep
    the last record. Scores absent for a known class rank last.
    """
    pred: dict[str, dict[int, float]] = {}
    for lineno, line in enumerate(Path(predictions_path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            image_id = obj["image_id"]
            scores = {int(k): float(v) for k, v in obj["scores"].items()}
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise MetricsError(f"{predictions_path}:{lineno}: malformed prediction record") from None
        pred[image_id] = scores

    gt: dict[str, tuple[set[int], set[int]]] = {}
    for lineno, line in enumerate(Path(ground_truth_path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            image_id = obj["image_id"]
            positive = {int(v) for v in obj.get("positive", [])}
            negative = {int(v) for v in obj.get("negative", [])}
        except (json.JSONDecodeError, KeyError, TypeError, ValueError):
            raise MetricsError(f"{ground_truth_path}:{lineno}: malformed ground-truth record") from None
        gt[image_id] = (positive, negative)

    image_ids = sorted(set(pred) | set(gt))
    class_set: set[int] = set()
    for scores in pred.values():
        class_set.update(scores)
    for positive, negative in gt.values():
        class_set.update(positive)
        class_set.update(negative)
    if not class_set:
        raise MetricsError("no classes found in predictions or ground truth")
    class_ids = sorted(class_set)
    col = {cid: i for i, cid in enumerate(class_ids)}

    scores = np.full((len(image_ids), len(class_ids)), MISSING_SCORE, dtype=np.float64)
    labels = np.full((len(image_ids), len(class_ids)), LABEL_UNANNOTATED, dtype=np.int8)
    for r, image_id in enumerate(image_ids):
        for cid, value in pred.get(image_id, {}).items():
            scores[r, col[cid]] = value
        positive, negative = gt.get(image_id, (set(), set()))
        for cid in positive:
            labels[r, col[cid]] = LABEL_POSITIVE
        for cid in negative:
            labels[r, col[cid]] = LABEL_NEGATIVE
    return EvalInstances(image_ids, class_ids, scores, labels)


def write_report(report: EvalReport, path: str | Path) -> None:
    """Per-class TSV table followed by a '#'-prefixed summary block."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("class_id\tap\n")
        for class_id in sorted(report.per_class_ap):
            fh.write(f"{class_id}\t{report.per_class_ap[class_id]:.6f}\n")
        for class_id, reason in report.skipped_classes:
            fh.write(f"{class_id}\tskipped: {reason}\n")
        fh.write(f"#mAP\t{report.mean_ap:.6f}\n")
        fh.write(f"#evaluated_classes\t{report.evaluated_classes}\n")
        fh.write(f"#micro_precision\t{report.micro_precision:.6f}\n")
        fh.write(f"#micro_recall\t{report.micro_recall:.6f}\n")
        fh.write(f"#macro_precision\t{report.macro_precision:.6f}\n")
        fh.write(f"#macro_recall\t{report.macro_recall:.6f}\n")
