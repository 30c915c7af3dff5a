"""Ridge-regression relation classifiers over pair descriptors.

The weights solve min_W ||Z - XW||_F^2 / N + lam ||W||_F^2 in closed form:

    W = (X^T X + N lam I)^{-1} X^T Z

The d x d system is factored once (Cholesky; the matrix is SPD for lam > 0)
and reused for every right-hand side.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .core import TripletAnnotation, Vocabulary, iou
from .features import PcaModel
from .gmm import GmmModel


class RidgeFactor:
    """Cholesky factor of X^T X + N lam I, reusable across label matrices."""

    def __init__(self, x: np.ndarray, lam: float):
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError("design matrix must be 2-d")
        if not np.all(np.isfinite(x)):
            raise ValueError("design matrix must be finite")
        if lam <= 0:
            raise ValueError(f"regularizer must be positive, got {lam}")
        n = x.shape[0]
        a = x.T @ x + n * lam * np.eye(x.shape[1])
        self._factor = cho_factor(a)
        self._x = x
        self.n = n
        self.lam = lam

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """A^{-1} rhs for the factored A."""
        return cho_solve(self._factor, rhs)

    def weights(self, z: np.ndarray) -> np.ndarray:
        """W = A^{-1} X^T Z."""
        z = np.asarray(z, dtype=np.float64)
        if z.shape[0] != self.n:
            raise ValueError(
                f"label matrix has {z.shape[0]} rows, design has {self.n}"
            )
        if not np.all(np.isfinite(z)):
            raise ValueError("label matrix must be finite")
        return self.solve(self._x.T @ z)


@dataclass(frozen=True)
class RelationModel:
    """Trained predicate scorers plus the featurizers they expect.

    ``weights`` has one column per predicate column (including no-relation
    when trained that way).  The GMM/PCA/vocabulary are optional so that
    purely numeric experiments can carry weights alone.
    """

    weights: np.ndarray  # (d, R')
    lam: float
    vocabulary: Vocabulary | None = None
    gmm: GmmModel | None = None
    pca: PcaModel | None = None

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=np.float64)
        if w.ndim != 2:
            raise ValueError("weights must be 2-d")
        if not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite")
        if self.lam <= 0:
            raise ValueError(f"regularizer must be positive, got {self.lam}")
        object.__setattr__(self, "weights", w)

    @property
    def dim(self) -> int:
        return self.weights.shape[0]

    @property
    def num_columns(self) -> int:
        return self.weights.shape[1]

    def scores(self, x: np.ndarray) -> np.ndarray:
        """x @ W for a descriptor row or matrix."""
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise ValueError(f"expected {self.dim} features, got {x.shape[-1]}")
        return x @ self.weights


def train_ridge(
    x: np.ndarray,
    z: np.ndarray,
    lam: float,
    vocabulary: Vocabulary | None = None,
    gmm: GmmModel | None = None,
    pca: PcaModel | None = None,
) -> RelationModel:
    """Closed-form ridge fit of label matrix Z on descriptors X."""
    z = np.asarray(z, dtype=np.float64)
    factor = RidgeFactor(x, lam)
    return RelationModel(
        weights=factor.weights(z),
        lam=lam,
        vocabulary=vocabulary,
        gmm=gmm,
        pca=pca,
    )


@dataclass
class FullMatchResult:
    """Pair-level labels recovered from box-level annotations.

    ``row_indices`` index into the candidate-pair design matrix and may
    repeat: a pair that matched several annotations contributes one
    one-hot row per predicate.  Pairs no annotation claimed are absent
    (all-zero label rows are excluded from the ridge fit); sampled
    no-relation negatives are a separate, explicit step.
    """

    row_indices: np.ndarray  # (N',) indices into the pair matrix
    z: np.ndarray            # (N', R') strictly one-hot rows
    matched: int = 0
    skipped: int = 0
    multi_label_pairs: int = 0
    assigned: list = field(default_factory=list)

    def training_set(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(X', Z') with X rows gathered (and duplicated) to match z."""
        x = np.asarray(x, dtype=np.float64)
        return x[self.row_indices], self.z


def match_full_annotations(
    annotations: list[TripletAnnotation],
    pair_boxes: list,
    pair_categories: list[tuple[int, int]],
    vocabulary: Vocabulary,
    iou_threshold: float = 0.5,
) -> FullMatchResult:
    """Assign annotated predicates to candidate pairs by box overlap.

    A pair matches an annotation when categories agree and both the
    subject and object boxes reach ``iou_threshold`` IoU with the
    annotated boxes; among pairs that qualify, the annotation goes to
    the one with the largest IoU product.  Annotations without boxes,
    or with no qualifying pair, are skipped (counted).
    """
    n = len(pair_boxes)
    r_cols = vocabulary.num_predicate_columns
    matched = 0
    skipped = 0
    assigned = [[] for _ in range(n)]
    for ann in annotations:
        if not ann.has_boxes:
            skipped += 1
            continue
        s_idx = ann.subject_category
        o_idx = ann.object_category
        p_idx = ann.predicate
        best_row = -1
        best_quality = 0.0
        for row, ((sbox, obox), cats) in enumerate(
            zip(pair_boxes, pair_categories)
        ):
            if tuple(cats) != (s_idx, o_idx):
                continue
            iou_s = iou(sbox, ann.subject_box)
            iou_o = iou(obox, ann.object_box)
            if iou_s < iou_threshold or iou_o < iou_threshold:
                continue
            quality = iou_s * iou_o
            if quality > best_quality:
                best_quality = quality
                best_row = row
        if best_row < 0:
            skipped += 1
            continue
        if p_idx not in assigned[best_row]:
            assigned[best_row].append(p_idx)
        matched += 1
    rows = []
    labels = []
    multi = 0
    for row in range(n):
        if not assigned[row]:
            continue
        if len(assigned[row]) > 1:
            multi += 1
        for col in assigned[row]:
            rows.append(row)
            labels.append(col)
    z = np.zeros((len(rows), r_cols))
    z[np.arange(len(rows)), labels] = 1.0
    return FullMatchResult(
        row_indices=np.asarray(rows, dtype=np.int64),
        z=z,
        matched=matched,
        skipped=skipped,
        multi_label_pairs=multi,
        assigned=assigned,
    )


def train_noisy(
    x: np.ndarray,
    bags: list,
    num_columns: int,
    lam: float,
    seed: int = 0,
    negative_rows: np.ndarray | None = None,
    no_relation_index: int | None = None,
    vocabulary: Vocabulary | None = None,
    gmm: GmmModel | None = None,
    pca: PcaModel | None = None,
) -> RelationModel:
    """Noisy baseline: pick one pair per bag at random and train on it.

    Each weak annotation contributes exactly one labeled row: a uniform
    draw from its bag, stamped with the bag's predicate.  Remaining pairs
    are discarded, except optional ``negative_rows`` which are kept as
    one-hot no-relation rows.  The draw is seeded, so reruns with the
    same seed give bit-identical weights.
    """
    x = np.asarray(x, dtype=np.float64)
    rng = np.random.default_rng(seed)
    rows = []
    labels = []
    for bag in bags:
        pick = int(rng.choice(np.asarray(bag.rows, dtype=np.int64)))
        rows.append(pick)
        labels.append(bag.predicate_index)
    if negative_rows is not None and len(negative_rows) > 0:
        if no_relation_index is None:
            raise ValueError("negative rows require a no-relation column index")
        for row in np.asarray(negative_rows, dtype=np.int64):
            rows.append(int(row))
            labels.append(no_relation_index)
    if not rows:
        raise ValueError("no bags to train on")
    z = np.zeros((len(rows), num_columns))
    z[np.arange(len(rows)), labels] = 1.0
    return train_ridge(
        x[np.asarray(rows, dtype=np.int64)],
        z,
        lam,
        vocabulary=vocabulary,
        gmm=gmm,
        pca=pca,
    )
