"""Candidate-pair construction from raw per-image detections.

Detections are filtered (top-k by confidence, score threshold,
per-category NMS) and the survivors enumerated as ordered pairs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import Detection, iou
from .features import PairDescriptor


@dataclass(frozen=True)
class CandidateConfig:
    score_threshold: float = 0.3
    top_k: int = 100
    nms_threshold: float = 0.3
    max_pairs_per_image: int | None = None  # 500 for exhaustive retrieval

    def __post_init__(self):
        if not 0.0 <= self.score_threshold <= 1.0:
            raise ValueError("score threshold must be in [0, 1]")
        if not 0.0 <= self.nms_threshold <= 1.0:
            raise ValueError("nms threshold must be in [0, 1]")
        if self.top_k < 1:
            raise ValueError("top_k must be at least 1")
        if self.max_pairs_per_image is not None and self.max_pairs_per_image < 1:
            raise ValueError("max_pairs_per_image must be at least 1")


@dataclass(frozen=True)
class PairCandidate:
    """Ordered (subject, object) pair of detections from one image."""

    image_id: str
    subject: Detection
    object: Detection
    descriptor: PairDescriptor | None = None

    def __post_init__(self):
        same_box = self.subject.box == self.object.box
        same_cat = self.subject.category == self.object.category
        if same_box and same_cat:
            raise ValueError("subject and object must be distinct detections")

    @property
    def score_product(self) -> float:
        return self.subject.score * self.object.score

    @property
    def categories(self) -> tuple[int, int]:
        return (self.subject.category, self.object.category)


def _stable_by_score(detections: list[Detection]) -> list[Detection]:
    """Score-descending order, input order breaking ties."""
    order = sorted(
        range(len(detections)), key=lambda i: (-detections[i].score, i)
    )
    return [detections[i] for i in order]


def nms(detections: list[Detection], threshold: float) -> list[Detection]:
    """Greedy per-category non-maximum suppression.

    Walk detections by descending score; keep one iff its IoU with every
    already-kept detection of the same category is <= threshold.
    Categories never suppress each other: co-located distinct objects
    (person wearing a shirt) must both survive.
    """
    kept: list[Detection] = []
    for det in _stable_by_score(detections):
        ok = True
        for prev in kept:
            if prev.category != det.category:
                continue
            if iou(prev.box, det.box) > threshold:
                ok = False
                break
        if ok:
            kept.append(det)
    return kept


def select_candidates(
    detections: list[Detection], config: CandidateConfig = CandidateConfig()
) -> list[Detection]:
    """Top-k by confidence, then score > threshold, then per-category NMS."""
    top = _stable_by_score(detections)[: config.top_k]
    survivors = [d for d in top if d.score > config.score_threshold]
    return nms(survivors, config.nms_threshold)


def enumerate_pairs(
    detections: list[Detection],
    image_id: str | None = None,
    max_pairs: int | None = None,
) -> list[PairCandidate]:
    """All ordered pairs (i, j), i != j, of the kept detections.

    With ``max_pairs`` set, the list is truncated to the pairs with the
    largest subject-score x object-score products (stable in enumeration
    order on ties).
    """
    pairs = []
    for i, subject in enumerate(detections):
        for j, obj in enumerate(detections):
            if i == j:
                continue
            pairs.append(
                PairCandidate(
                    image_id=image_id
                    if image_id is not None
                    else subject.image_id,
                    subject=subject,
                    object=obj,
                )
            )
    if max_pairs is not None and len(pairs) > max_pairs:
        order = sorted(
            range(len(pairs)), key=lambda idx: (-pairs[idx].score_product, idx)
        )
        pairs = [pairs[idx] for idx in sorted(order[:max_pairs])]
    return pairs


def build_image_pairs(
    detections: list[Detection],
    config: CandidateConfig = CandidateConfig(),
    filter_detections: bool = True,
) -> list[PairCandidate]:
    """Filter one image's detections and enumerate candidate pairs.

    Pre-filtered detection sets (for protocol parity with externally
    supplied candidates) can skip selection with ``filter_detections``.
    """
    kept = select_candidates(detections, config) if filter_detections else list(detections)
    return enumerate_pairs(kept, max_pairs=config.max_pairs_per_image)
