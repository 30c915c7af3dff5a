"""Seeded synthetic benchmarks with known planted structure.

Two levels:

* ``planted_descriptor_problem`` plants predicate clusters directly in
  descriptor space and wraps them in weak bags; it closes the loop on
  the weak trainer (can Frank-Wolfe find the planted rows?) without any
  featurization in the way.
* ``make_planted_dataset`` synthesizes a full on-disk style dataset
  (detections, appearance features, weak/boxed annotations) whose
  predicates are spatial arrangements, so the whole pipeline from GMM
  fitting to recall evaluation can run end to end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import BoundingBox, Detection, TripletAnnotation, Vocabulary
from .io import Dataset, FeatureStore
from .weak import Bag

PLANTED_PREDICATES = ("left of", "right of", "above", "below", "inside")
PLANTED_OBJECTS = ("crate", "lamp", "kettle", "plant", "stool", "radio")


@dataclass
class PlantedProblem:
    """Descriptor-space weak-learning instance with known answers."""

    x: np.ndarray                  # (N, d) descriptors
    bags: list[Bag]
    planted_rows: list[tuple[int, int]]  # (row, predicate) per bag
    row_predicate: np.ndarray      # (N,) planted predicate or -1
    test_x: np.ndarray
    test_labels: np.ndarray
    num_predicates: int
    centers: np.ndarray = field(repr=False, default=None)


def planted_descriptor_problem(
    num_images: int = 200,
    num_predicates: int = 5,
    dim: int = 30,
    bag_size_range: tuple[int, int] = (3, 12),
    test_per_class: int = 40,
    center_norm: float = 4.5,
    positive_sigma: float = 0.2,
    background_sigma: float = 0.25,
    test_sigma: float | None = 1.0,
    seed: int = 0,
) -> PlantedProblem:
    """One bag per image; exactly one row drawn from the bag's cluster.

    Cluster centers are mutually orthogonal with norm ``center_norm``;
    planted rows are tight Gaussians around them, the rest of each bag is
    low-energy background noise around the origin.  Held-out samples are
    drawn with ``test_sigma`` (pass ``None`` to reuse ``positive_sigma``);
    the larger default stress-tests how much label noise each trainer
    absorbed, which is what separates clean, weak and noisy training.
    """
    rng = np.random.default_rng(seed)
    if test_sigma is None:
        test_sigma = positive_sigma
    basis, _ = np.linalg.qr(rng.standard_normal((dim, num_predicates)))
    centers = basis.T * center_norm
    rows = []
    bags = []
    planted_rows = []
    row_predicate = []
    lo, hi = bag_size_range
    for i in range(num_images):
        r = i % num_predicates
        size = int(rng.integers(lo, hi + 1))
        planted_pos = int(rng.integers(size))
        start = len(rows)
        for pos in range(size):
            if pos == planted_pos:
                rows.append(
                    centers[r] + positive_sigma * rng.standard_normal(dim)
                )
                row_predicate.append(r)
            else:
                rows.append(background_sigma * rng.standard_normal(dim))
                row_predicate.append(-1)
        bags.append(
            Bag(
                rows=tuple(range(start, start + size)),
                predicate_index=r,
                image_id=f"im{i:04d}",
            )
        )
        planted_rows.append((start + planted_pos, r))
    test_x = []
    test_labels = []
    for r in range(num_predicates):
        for _ in range(test_per_class):
            test_x.append(centers[r] + test_sigma * rng.standard_normal(dim))
            test_labels.append(r)
    return PlantedProblem(
        x=np.asarray(rows),
        bags=bags,
        planted_rows=planted_rows,
        row_predicate=np.asarray(row_predicate, dtype=np.int64),
        test_x=np.asarray(test_x),
        test_labels=np.asarray(test_labels, dtype=np.int64),
        num_predicates=num_predicates,
        centers=centers,
    )


# (n_subjects, n_objects) choices whose product spans bag sizes 3..12
_BAG_SHAPES = (
    (1, 3), (3, 1), (2, 2), (1, 5), (5, 1), (2, 3), (3, 2),
    (1, 7), (2, 4), (4, 2), (3, 3), (2, 5), (5, 2), (3, 4), (4, 3), (2, 6),
)

_CANVAS = 256.0
_MAX_BOX = 28.0
# largest possible planted offset; keeps placed objects inside the canvas
# worst-case planted partner extent: offset (1 + 1.75)/2 * 1.3 plus half
# the 1.75-scaled object, relative to a tight subject side of 24
_PLANT_MARGIN = 24.0 * (2.75 / 2 * 1.3 + 1.75 / 2) + 2.0


def _snap(v: float) -> float:
    # eighths are exact in binary floats at canvas scale, so center-form
    # boxes survive the corner-form file format bit-identically
    return round(v * 8.0) / 8.0


def _snapped_box(x, y, w, h) -> BoundingBox:
    return BoundingBox(x=_snap(x), y=_snap(y), w=_snap(w), h=_snap(h))


def _random_box(rng, margin: float = 1.0, tight: bool = False) -> BoundingBox:
    lo, hi = (18.0, 24.0) if tight else (12.0, _MAX_BOX)
    w = float(rng.uniform(lo, hi))
    h = float(rng.uniform(lo, hi))
    x = float(rng.uniform(w / 2 + margin, _CANVAS - w / 2 - margin))
    y = float(rng.uniform(h / 2 + margin, _CANVAS - h / 2 - margin))
    return _snapped_box(x, y, w, h)


# per-predicate object/subject size ratio: a second tight cue besides the
# offset direction, so each arrangement is a genuine cluster in feature
# space while decoy pairs spread over the whole continuum
_PLANT_SCALE = {0: (0.50, 0.60), 1: (1.55, 1.75), 2: (0.78, 0.88),
                3: (1.15, 1.30), 4: (0.38, 0.45)}


def _object_box_for(predicate: int, subject: BoundingBox, rng) -> BoundingBox:
    """Place the object so the pair realizes the predicate's arrangement."""
    jitter = rng.uniform(-1.0, 1.0, size=2)
    gap = float(rng.uniform(1.15, 1.3))
    scale = float(rng.uniform(*_PLANT_SCALE[predicate]))
    w = subject.w * scale
    h = subject.h * scale
    if predicate == 4:  # inside: concentric, clearly smaller
        return _snapped_box(
            subject.x + jitter[0] * 0.5, subject.y + jitter[1] * 0.5, w, h
        )
    dx, dy = 0.0, 0.0
    if predicate == 0:    # object sits left of the subject
        dx = -(subject.w + w) / 2 * gap
    elif predicate == 1:  # right
        dx = (subject.w + w) / 2 * gap
    elif predicate == 2:  # above (smaller y)
        dy = -(subject.h + h) / 2 * gap
    else:                 # below
        dy = (subject.h + h) / 2 * gap
    return _snapped_box(
        subject.x + dx + jitter[0], subject.y + dy + jitter[1], w, h
    )


@dataclass
class PlantedRecord:
    """Which detection pair realizes each generated annotation."""

    image_id: str
    split: str
    subject_detection_id: str
    object_detection_id: str
    predicate: str


@dataclass
class PlantedDataset:
    dataset: Dataset
    planted: list[PlantedRecord]


def make_planted_dataset(
    num_train: int = 120,
    num_val: int = 12,
    num_test: int = 16,
    feature_dim: int = 32,
    feature_noise: float = 0.05,
    min_detector_score: float = 0.5,
    seed: int = 0,
) -> PlantedDataset:
    """Full synthetic dataset whose predicates are spatial arrangements.

    Every image carries one planted (subject, predicate, object) pair
    among decoy detections of the same two categories.  Detections are a
    perfect detector's output (boxes equal the placed boxes); appearance
    features are noisy category prototypes.  Annotations carry the
    planted boxes in every split; weak training ignores them.
    """
    rng = np.random.default_rng(seed)
    vocabulary = Vocabulary(
        object_names=PLANTED_OBJECTS,
        predicate_names=PLANTED_PREDICATES,
        has_no_relation=True,
    )
    num_objects = vocabulary.num_objects
    prototypes, _ = np.linalg.qr(
        rng.standard_normal((feature_dim, num_objects))
    )
    prototypes = prototypes.T  # (num_objects, feature_dim) unit rows
    detections: dict[str, list[Detection]] = {}
    annotations: dict[str, list[TripletAnnotation]] = {
        "train": [], "val": [], "test": []
    }
    splits: dict[str, list[str]] = {"train": [], "val": [], "test": []}
    planted: list[PlantedRecord] = []
    feature_ids: list[str] = []
    feature_rows: list[np.ndarray] = []
    plan = (
        [("train", i) for i in range(num_train)]
        + [("val", i) for i in range(num_val)]
        + [("test", i) for i in range(num_test)]
    )
    for image_no, (split, _) in enumerate(plan):
        image_id = f"{split}{image_no:04d}"
        splits[split].append(image_id)
        r = image_no % vocabulary.num_predicates
        s_cat, o_cat = rng.choice(num_objects, size=2, replace=False)
        n_s, n_o = _BAG_SHAPES[int(rng.integers(len(_BAG_SHAPES)))]
        subject_boxes = [_random_box(rng) for _ in range(n_s)]
        object_boxes = [_random_box(rng) for _ in range(n_o)]
        i_star = int(rng.integers(n_s))
        j_star = int(rng.integers(n_o))
        # the planted subject keeps a margin so its partner fits on canvas
        subject_boxes[i_star] = _random_box(rng, margin=_PLANT_MARGIN, tight=True)
        object_boxes[j_star] = _object_box_for(r, subject_boxes[i_star], rng)
        dets = []
        det_ids: dict[tuple[str, int], str] = {}
        for role, cat, boxes, star in (
            ("s", int(s_cat), subject_boxes, i_star),
            ("o", int(o_cat), object_boxes, j_star),
        ):
            for idx, box in enumerate(boxes):
                det_id = f"{image_id}:{role}{idx}"
                det_ids[(role, idx)] = det_id
                feature = prototypes[cat] + feature_noise * rng.standard_normal(
                    feature_dim
                )
                feature_ids.append(det_id)
                feature_rows.append(feature)
                # planted detections outscore decoys so greedy NMS and
                # pair truncation never drop the annotated pair itself
                if idx == star:
                    score = float(rng.uniform(0.9, 1.0))
                else:
                    score = float(rng.uniform(min_detector_score, 0.88))
                dets.append(
                    Detection(
                        box=box,
                        category=cat,
                        score=score,
                        image_id=image_id,
                        feature_ref=len(feature_ids) - 1,
                        detection_id=det_id,
                    )
                )
        detections[image_id] = dets
        # boxes ride along in every split: the weak path only ever reads
        # image-level labels, while full training and recall need them
        annotations[split].append(
            TripletAnnotation(
                image_id=image_id,
                subject_category=int(s_cat),
                predicate=r,
                object_category=int(o_cat),
                subject_box=subject_boxes[i_star],
                object_box=object_boxes[j_star],
            )
        )
        planted.append(
            PlantedRecord(
                image_id=image_id,
                split=split,
                subject_detection_id=det_ids[("s", i_star)],
                object_detection_id=det_ids[("o", j_star)],
                predicate=vocabulary.predicate_names[r],
            )
        )
    features = FeatureStore(feature_ids, np.asarray(feature_rows))
    dataset = Dataset(
        root=None,
        vocabulary=vocabulary,
        detections=detections,
        annotations=annotations,
        features=features,
        splits={s: tuple(ids) for s, ids in splits.items()},
    )
    return PlantedDataset(dataset=dataset, planted=planted)


def make_tiny_dataset(seed: int = 0) -> PlantedDataset:
    """Smallest loadable fixture: one image per split."""
    return make_planted_dataset(
        num_train=1, num_val=1, num_test=1, feature_dim=8, seed=seed
    )
