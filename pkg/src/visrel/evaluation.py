"""Detection-recall, retrieval-mAP and recognition-accuracy protocols.

All metrics are rank-only: any strictly increasing transform of the
prediction scores leaves them unchanged.  Score ties break by stable
input order so results are bit-reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BoundingBox, TripletAnnotation, iou, union_box


@dataclass(frozen=True)
class PredictedTriplet:
    """One scored (subject, predicate, object) prediction with boxes."""

    image_id: str
    subject_category: int
    predicate: int
    object_category: int
    subject_box: BoundingBox
    object_box: BoundingBox
    score: float

    def labels(self) -> tuple[int, int, int]:
        return (self.subject_category, self.predicate, self.object_category)


@dataclass(frozen=True)
class EvalConfig:
    x: int = 50                    # recall cutoff per image
    iou_threshold: float = 0.5     # 0.3 for the looser retrieval setting
    mode: str = "relationship"     # predicate | phrase | relationship
    localization: str = "subj_obj"  # gt | union | subj | subj_obj
    preds_per_pair: int = 1

    def __post_init__(self):
        if self.x < 1:
            raise ValueError("recall cutoff must be at least 1")
        if not 0.0 < self.iou_threshold <= 1.0:
            raise ValueError("iou threshold must be in (0, 1]")
        if self.mode not in ("predicate", "phrase", "relationship"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.localization not in ("gt", "union", "subj", "subj_obj"):
            raise ValueError(f"unknown localization {self.localization!r}")
        if self.preds_per_pair < 1:
            raise ValueError("preds_per_pair must be at least 1")


@dataclass
class EvalReport:
    """Metric value with the counts that produced it."""

    metric: str
    value: float
    num_gt: int = 0
    num_matched: int = 0
    num_predictions: int = 0
    per_group: dict = field(default_factory=dict)
    excluded: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0 + 1e-12:
            raise ValueError("metric value must lie in [0, 1]")
        if self.num_matched > self.num_gt:
            raise ValueError("matched count cannot exceed ground truth count")


def _prediction_matches(
    pred: PredictedTriplet,
    gt: TripletAnnotation,
    mode: str,
    threshold: float,
) -> tuple[bool, float]:
    """(matches?, match quality) of one prediction against one GT triplet."""
    if pred.labels() != (
        gt.subject_category,
        gt.predicate,
        gt.object_category,
    ):
        return False, 0.0
    if mode == "predicate":
        # protocol hands the GT boxes to the predictor, labels decide
        return True, 1.0
    if mode == "phrase":
        q = iou(
            union_box(pred.subject_box, pred.object_box),
            union_box(gt.subject_box, gt.object_box),
        )
        return q >= threshold, q
    iou_s = iou(pred.subject_box, gt.subject_box)
    iou_o = iou(pred.object_box, gt.object_box)
    return (iou_s >= threshold and iou_o >= threshold), min(iou_s, iou_o)


def _greedy_match_count(
    predictions: list[PredictedTriplet],
    gts: list[TripletAnnotation],
    mode: str,
    threshold: float,
) -> int:
    """Greedy one-to-one matching by descending prediction rank.

    Each prediction claims the unconsumed GT it matches best (largest
    match quality); each GT is consumed at most once.
    """
    consumed = [False] * len(gts)
    matched = 0
    for pred in predictions:
        best = -1
        best_quality = -1.0
        for g, gt in enumerate(gts):
            if consumed[g]:
                continue
            ok, quality = _prediction_matches(pred, gt, mode, threshold)
            if ok and quality > best_quality:
                best = g
                best_quality = quality
        if best >= 0:
            consumed[best] = True
            matched += 1
    return matched


def max_match_count(
    predictions: list[PredictedTriplet],
    gts: list[TripletAnnotation],
    mode: str,
    threshold: float,
) -> int:
    """Maximum bipartite matching size between predictions and GT.

    Reference matcher (augmenting paths); the greedy matcher can never
    exceed it, and equals it on every small case we generate.
    """
    edges = [
        [
            g
            for g, gt in enumerate(gts)
            if _prediction_matches(pred, gt, mode, threshold)[0]
        ]
        for pred in predictions
    ]
    match_of_gt = [-1] * len(gts)

    def try_assign(p, seen):
        for g in edges[p]:
            if seen[g]:
                continue
            seen[g] = True
            if match_of_gt[g] < 0 or try_assign(match_of_gt[g], seen):
                match_of_gt[g] = p
                return True
        return False

    count = 0
    for p in range(len(predictions)):
        if try_assign(p, [False] * len(gts)):
            count += 1
    return count


def _sorted_stable(preds: list[PredictedTriplet]) -> list[PredictedTriplet]:
    order = sorted(range(len(preds)), key=lambda i: (-preds[i].score, i))
    return [preds[i] for i in order]


def recall_at_x(
    predictions_by_image: dict[str, list[PredictedTriplet]],
    gt_by_image: dict[str, list[TripletAnnotation]],
    config: EvalConfig,
) -> EvalReport:
    """Fraction of GT triplets recovered in each image's top-x predictions.

    A kept prediction recalls a GT triplet when labels agree and boxes
    match under the mode: predicate needs labels only, phrase needs
    union-box IoU >= threshold, relationship needs both subject and
    object IoU >= threshold.  Matching is one-to-one, greedy by score.
    """
    total_gt = 0
    total_matched = 0
    total_preds = 0
    per_image = {}
    for image_id in sorted(gt_by_image):
        gts = gt_by_image[image_id]
        if config.mode in ("phrase", "relationship"):
            for gt in gts:
                if not gt.has_boxes:
                    raise ValueError(
                        f"GT without boxes in image {image_id!r} under "
                        f"{config.mode} mode"
                    )
        preds = _sorted_stable(predictions_by_image.get(image_id, []))
        kept = preds[: config.x]
        matched = _greedy_match_count(
            kept, gts, config.mode, config.iou_threshold
        )
        total_gt += len(gts)
        total_matched += matched
        total_preds += len(kept)
        per_image[image_id] = {"gt": len(gts), "matched": matched}
    value = total_matched / total_gt if total_gt else 0.0
    return EvalReport(
        metric=f"{config.mode}_recall@{config.x}",
        value=value,
        num_gt=total_gt,
        num_matched=total_matched,
        num_predictions=total_preds,
        per_group=per_image,
    )


@dataclass(frozen=True)
class RankedCandidate:
    """One entry of a query's ranked list in retrieval evaluation."""

    image_id: str
    subject_box: BoundingBox
    object_box: BoundingBox
    score: float
    labels: tuple[int, int, int] | None = None  # for gt localization


@dataclass(frozen=True)
class RetrievalQuery:
    subject_category: int
    predicate: int
    object_category: int

    @property
    def labels(self) -> tuple[int, int, int]:
        return (self.subject_category, self.predicate, self.object_category)


def _candidate_matches_gt(
    cand: RankedCandidate,
    gt: TripletAnnotation,
    localization: str,
    threshold: float,
) -> tuple[bool, float]:
    if cand.image_id != gt.image_id:
        return False, 0.0
    if localization == "gt":
        same = (
            cand.subject_box == gt.subject_box
            and cand.object_box == gt.object_box
        )
        return same, 1.0 if same else 0.0
    if localization == "union":
        q = iou(
            union_box(cand.subject_box, cand.object_box),
            union_box(gt.subject_box, gt.object_box),
        )
        return q >= threshold, q
    if localization == "subj":
        q = iou(cand.subject_box, gt.subject_box)
        return q >= threshold, q
    iou_s = iou(cand.subject_box, gt.subject_box)
    iou_o = iou(cand.object_box, gt.object_box)
    return (iou_s >= threshold and iou_o >= threshold), min(iou_s, iou_o)


def average_precision(
    ranking: list[RankedCandidate],
    positives: list[TripletAnnotation],
    query: RetrievalQuery,
    config: EvalConfig,
) -> tuple[float, int]:
    """AP of one ranked list: mean precision at positive ranks over n_GT.

    A candidate is positive when it matches an unconsumed GT pair under
    the localization criterion (best match by quality); GT pairs never
    retrieved contribute zero terms.  Returns (AP, hits).
    """
    ranked = sorted(
        range(len(ranking)), key=lambda i: (-ranking[i].score, i)
    )
    consumed = [False] * len(positives)
    hits = 0
    precision_sum = 0.0
    for rank, idx in enumerate(ranked, start=1):
        cand = ranking[idx]
        if config.localization == "gt" and cand.labels is not None:
            # with-GT setup: candidates are the annotated pairs themselves
            match = -1
            if cand.labels == query.labels:
                for g, gt in enumerate(positives):
                    ok, _ = _candidate_matches_gt(
                        cand, gt, "gt", config.iou_threshold
                    )
                    if ok and not consumed[g]:
                        match = g
                        break
        else:
            match = -1
            best_quality = -1.0
            for g, gt in enumerate(positives):
                if consumed[g]:
                    continue
                ok, quality = _candidate_matches_gt(
                    cand, gt, config.localization, config.iou_threshold
                )
                if ok and quality > best_quality:
                    match = g
                    best_quality = quality
        if match >= 0:
            consumed[match] = True
            hits += 1
            precision_sum += hits / rank
    if not positives:
        return 0.0, 0
    return precision_sum / len(positives), hits


def retrieval_map(
    rankings: dict[RetrievalQuery, list[RankedCandidate]],
    positives: dict[RetrievalQuery, list[TripletAnnotation]],
    config: EvalConfig,
) -> EvalReport:
    """Unweighted mean AP over queries; zero-GT queries are excluded."""
    ap_by_query = {}
    excluded = []
    total_gt = 0
    total_hits = 0
    total_candidates = 0
    for query in sorted(rankings, key=lambda q: q.labels):
        gts = positives.get(query, [])
        if not gts:
            excluded.append(query.labels)
            continue
        ap, hits = average_precision(rankings[query], gts, query, config)
        ap_by_query[query.labels] = ap
        total_gt += len(gts)
        total_hits += hits
        total_candidates += len(rankings[query])
    value = (
        sum(ap_by_query.values()) / len(ap_by_query) if ap_by_query else 0.0
    )
    return EvalReport(
        metric=f"retrieval_map_{config.localization}@{config.iou_threshold}",
        value=value,
        num_gt=total_gt,
        num_matched=total_hits,
        num_predictions=total_candidates,
        per_group=ap_by_query,
        excluded=excluded,
    )


def topk_accuracy(
    predicted: list[list[int]], gt: list[set[int] | list[int]], k: int
) -> EvalReport:
    """Fraction of pairs whose GT predicate set meets the top-k list."""
    if len(predicted) != len(gt):
        raise ValueError("predictions and ground truth must align")
    if k < 1:
        raise ValueError("k must be at least 1")
    hits = 0
    for preds, truths in zip(predicted, gt):
        if not truths:
            raise ValueError("each evaluated pair needs a GT predicate")
        if set(preds[:k]) & set(truths):
            hits += 1
    value = hits / len(predicted) if predicted else 0.0
    return EvalReport(
        metric=f"top{k}_accuracy",
        value=value,
        num_gt=len(gt),
        num_matched=hits,
        num_predictions=len(predicted),
    )


def format_report_table(reports: list[EvalReport]) -> str:
    """Aligned plain-text table of metric values and counts."""
    header = ("metric", "value", "gt", "matched", "predictions")
    rows = [
        (
            r.metric,
            f"{r.value:.4f}",
            str(r.num_gt),
            str(r.num_matched),
            str(r.num_predictions),
        )
        for r in reports
    ]
    widths = [
        max(len(header[c]), *(len(row[c]) for row in rows)) if rows else len(header[c])
        for c in range(5)
    ]
    lines = [
        "  ".join(header[c].ljust(widths[c]) for c in range(5)),
        "  ".join("-" * widths[c] for c in range(5)),
    ]
    for row in rows:
        lines.append("  ".join(row[c].ljust(widths[c]) for c in range(5)))
    return "\n".join(lines)


def report_json_dict(report: EvalReport) -> dict:
    """JSON-ready dict (keys stringified, deterministic order downstream)."""
    return {
        "metric": report.metric,
        "value": report.value,
        "num_gt": report.num_gt,
        "num_matched": report.num_matched,
        "num_predictions": report.num_predictions,
        "per_group": {
            str(k): v for k, v in sorted(report.per_group.items(), key=lambda kv: str(kv[0]))
        },
        "excluded": [list(e) for e in report.excluded],
    }
