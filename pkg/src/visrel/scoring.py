"""Test-time triplet scoring and validation-set weight tuning.

The score of a candidate pair for a query (s, r, o) is

    x . w_r + alpha_sub * v_sub + alpha_obj * v_obj + alpha_lang * l(s,o|r)

with v_sub/v_obj the detector confidences and l an ingested language
score (0 when absent).  The alphas are tuned by exhaustive grid search
maximizing relationship recall on a fully-annotated validation split;
the score is affine in each alpha, so per-cell rescoring reuses one
precomputed set of per-pair terms.
"""

from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass

import numpy as np

from .candidates import PairCandidate
from .core import Vocabulary
from .errors import DataError, QueryMismatchError
from .evaluation import EvalConfig, PredictedTriplet, recall_at_x
from .supervised import RelationModel


@dataclass(frozen=True)
class ScoreWeights:
    alpha_sub: float = 0.0
    alpha_obj: float = 0.0
    alpha_lang: float = 0.0

    def __post_init__(self):
        for name in ("alpha_sub", "alpha_obj", "alpha_lang"):
            value = getattr(self, name)
            if not np.isfinite(value) or value < 0:
                raise ValueError(f"{name} must be finite and >= 0")


DEFAULT_ALPHA_GRID = (0.0, 0.1, 0.3, 0.5, 1.0)


class LanguageScoreTable:
    """(subject, predicate, object) -> language score; absent entries are 0.

    Lookups of unlisted triplets return 0.0 and bump ``misses`` so
    coverage problems surface in reports instead of silently flattening
    the language term.
    """

    def __init__(self, scores: dict[tuple[int, int, int], float]):
        self._scores = dict(scores)
        self.misses = 0

    def __len__(self) -> int:
        return len(self._scores)

    def score(self, subject: int, predicate: int, obj: int) -> float:
        key = (subject, predicate, obj)
        if key not in self._scores:
            self.misses += 1
            return 0.0
        return self._scores[key]

    @classmethod
    def from_csv(cls, path, vocabulary: Vocabulary) -> "LanguageScoreTable":
        """Read `subject,predicate,object,score` rows (header required)."""
        scores: dict[tuple[int, int, int], float] = {}
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            required = {"subject", "predicate", "object", "score"}
            if reader.fieldnames is None or not required.issubset(
                reader.fieldnames
            ):
                raise DataError(
                    f"{path}: header must name columns {sorted(required)}"
                )
            for line_no, row in enumerate(reader, start=2):
                try:
                    key = (
                        vocabulary.object_index(row["subject"]),
                        vocabulary.predicate_index(row["predicate"]),
                        vocabulary.object_index(row["object"]),
                    )
                    value = float(row["score"])
                except (KeyError, ValueError) as exc:
                    raise DataError(f"{path}:{line_no}: {exc}") from exc
                if key in scores:
                    raise DataError(
                        f"{path}:{line_no}: duplicate triplet entry"
                    )
                scores[key] = value
        return cls(scores)


def _detector_terms(
    pair: PairCandidate, log_scores: bool
) -> tuple[float, float]:
    v_sub = pair.subject.score
    v_obj = pair.object.score
    if log_scores:
        # detector confidences live in [0, 1]; clamp keeps log finite
        v_sub = float(np.log(max(v_sub, 1e-12)))
        v_obj = float(np.log(max(v_obj, 1e-12)))
    return v_sub, v_obj


def triplet_score(
    pair: PairCandidate,
    query: tuple[int, int, int],
    model: RelationModel,
    weights: ScoreWeights,
    lang: LanguageScoreTable | None = None,
    log_scores: bool = False,
) -> float:
    """Composite score of one candidate pair for one (s, r, o) query."""
    s, r, o = query
    if pair.categories != (s, o):
        raise QueryMismatchError(
            f"pair categories {pair.categories} do not match query ({s}, {o})"
        )
    if pair.descriptor is None:
        raise ValueError("pair carries no descriptor")
    v_rel = float(pair.descriptor.full @ model.weights[:, r])
    v_sub, v_obj = _detector_terms(pair, log_scores)
    l_score = lang.score(s, r, o) if lang is not None else 0.0
    return (
        v_rel
        + weights.alpha_sub * v_sub
        + weights.alpha_obj * v_obj
        + weights.alpha_lang * l_score
    )


def predict_relations(
    pair: PairCandidate,
    model: RelationModel,
    k: int = 1,
    include_no_relation: bool = False,
) -> list[tuple[int, float]]:
    """Top-k predicates of one pair by v_rel, ties to the lower index."""
    if pair.descriptor is None:
        raise ValueError("pair carries no descriptor")
    scores = model.scores(pair.descriptor.full)
    num_real = scores.shape[0]
    if model.vocabulary is not None and not include_no_relation:
        num_real = model.vocabulary.num_predicates
    ranked = sorted(range(num_real), key=lambda r: (-scores[r], r))
    return [(r, float(scores[r])) for r in ranked[:k]]


@dataclass
class ImagePairScores:
    """Per-image precomputed score terms, affine in every alpha.

    ``v_rel`` covers real predicate columns only; the no-relation column,
    when the model has one, is kept separately for suppression flags.
    """

    image_id: str
    pairs: list[PairCandidate]
    v_rel: np.ndarray                 # (P, R)
    v_sub: np.ndarray                 # (P,)
    v_obj: np.ndarray                 # (P,)
    lang: np.ndarray                  # (P, R)
    no_relation: np.ndarray | None = None  # (P,) score of the extra column

    def cell_scores(self, weights: ScoreWeights) -> np.ndarray:
        """(P, R) composite scores for one grid cell."""
        return (
            self.v_rel
            + weights.alpha_sub * self.v_sub[:, None]
            + weights.alpha_obj * self.v_obj[:, None]
            + weights.alpha_lang * self.lang
        )


def image_pair_scores(
    image_id: str,
    pairs: list[PairCandidate],
    model: RelationModel,
    x: np.ndarray | None = None,
    num_predicates: int | None = None,
    lang: LanguageScoreTable | None = None,
    log_scores: bool = False,
) -> ImagePairScores:
    """Evaluate the model on every pair once; later rescoring is affine.

    Descriptor rows come from ``x`` when given (one row per pair, e.g.
    a stored pair set), otherwise from the pairs' attached descriptors.
    """
    if num_predicates is None:
        if model.vocabulary is None:
            raise ValueError("need num_predicates when model has no vocabulary")
        num_predicates = model.vocabulary.num_predicates
    p = len(pairs)
    if p == 0:
        return ImagePairScores(
            image_id=image_id,
            pairs=[],
            v_rel=np.zeros((0, num_predicates)),
            v_sub=np.zeros(0),
            v_obj=np.zeros(0),
            lang=np.zeros((0, num_predicates)),
            no_relation=None,
        )
    if x is None:
        x = np.stack([pair.descriptor.full for pair in pairs])
    else:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[0] != p:
            raise ValueError("one descriptor row per pair required")
    all_scores = model.scores(x)
    v_rel = all_scores[:, :num_predicates]
    no_rel = (
        all_scores[:, num_predicates]
        if all_scores.shape[1] > num_predicates
        else None
    )
    terms = [_detector_terms(pair, log_scores) for pair in pairs]
    v_sub = np.array([t[0] for t in terms])
    v_obj = np.array([t[1] for t in terms])
    lang_mat = np.zeros((p, num_predicates))
    if lang is not None:
        for i, pair in enumerate(pairs):
            s, o = pair.categories
            for r in range(num_predicates):
                lang_mat[i, r] = lang.score(s, r, o)
    return ImagePairScores(
        image_id=image_id,
        pairs=pairs,
        v_rel=v_rel,
        v_sub=v_sub,
        v_obj=v_obj,
        lang=lang_mat,
        no_relation=no_rel,
    )


def detection_predictions(
    scores: ImagePairScores,
    weights: ScoreWeights,
    preds_per_pair: int = 1,
    suppress_no_relation: bool = False,
) -> list[PredictedTriplet]:
    """Scored (s, r, o) predictions: top predicates per pair, all pairs.

    With ``suppress_no_relation`` a pair whose best column is the
    no-relation class emits nothing.
    """
    cell = scores.cell_scores(weights)
    out = []
    for i, pair in enumerate(scores.pairs):
        if (
            suppress_no_relation
            and scores.no_relation is not None
            and scores.no_relation[i] > scores.v_rel[i].max()
        ):
            continue
        ranked = sorted(
            range(cell.shape[1]), key=lambda r: (-cell[i, r], r)
        )
        for r in ranked[:preds_per_pair]:
            out.append(
                PredictedTriplet(
                    image_id=scores.image_id,
                    subject_category=pair.subject.category,
                    predicate=r,
                    object_category=pair.object.category,
                    subject_box=pair.subject.box,
                    object_box=pair.object.box,
                    score=float(cell[i, r]),
                )
            )
    return out


@dataclass
class TuneResult:
    weights: ScoreWeights
    recall: float
    grid_recalls: list[tuple[ScoreWeights, float]]


def tune_weights(
    scores_by_image: dict[str, ImagePairScores],
    gt_by_image: dict[str, list],
    grid_sub=DEFAULT_ALPHA_GRID,
    grid_obj=DEFAULT_ALPHA_GRID,
    grid_lang=DEFAULT_ALPHA_GRID,
    x: int = 50,
    iou_threshold: float = 0.5,
    preds_per_pair: int = 1,
) -> TuneResult:
    """Exhaustive alpha grid search on relationship-detection recall.

    The first cell (in grid order) attaining the best recall wins, so
    reruns are deterministic.
    """
    cells = list(itertools.product(grid_sub, grid_obj, grid_lang))
    if not cells:
        raise ValueError("empty tuning grid")
    config = EvalConfig(
        x=x, iou_threshold=iou_threshold, mode="relationship",
        preds_per_pair=preds_per_pair,
    )
    best: ScoreWeights | None = None
    best_recall = -1.0
    grid_recalls = []
    for a_sub, a_obj, a_lang in cells:
        weights = ScoreWeights(a_sub, a_obj, a_lang)
        predictions = {
            image_id: detection_predictions(
                scores, weights, preds_per_pair=preds_per_pair
            )
            for image_id, scores in scores_by_image.items()
        }
        report = recall_at_x(predictions, gt_by_image, config)
        grid_recalls.append((weights, report.value))
        if report.value > best_recall:
            best = weights
            best_recall = report.value
    return TuneResult(weights=best, recall=best_recall, grid_recalls=grid_recalls)


def retrieval_rankings(
    scores_by_image: dict[str, ImagePairScores],
    queries: list[tuple[int, int, int]],
    weights: ScoreWeights = ScoreWeights(),
    filter_no_relation: bool = False,
) -> dict:
    """Rank every category-matching test pair for each (s, r, o) query.

    Pairs whose best-scoring column is the no-relation class can be
    dropped with ``filter_no_relation``.  Returns evaluation-ready
    rankings keyed by query.
    """
    from .evaluation import RankedCandidate, RetrievalQuery

    rankings = {}
    for s, r, o in queries:
        query = RetrievalQuery(s, r, o)
        entries = []
        for image_id in sorted(scores_by_image):
            scores = scores_by_image[image_id]
            cell = scores.cell_scores(weights) if scores.pairs else None
            for i, pair in enumerate(scores.pairs):
                if pair.categories != (s, o):
                    continue
                if (
                    filter_no_relation
                    and scores.no_relation is not None
                    and scores.no_relation[i] > scores.v_rel[i].max()
                ):
                    continue
                entries.append(
                    RankedCandidate(
                        image_id=image_id,
                        subject_box=pair.subject.box,
                        object_box=pair.object.box,
                        score=float(cell[i, r]),
                    )
                )
        rankings[query] = entries
    return rankings
