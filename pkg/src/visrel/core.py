"""Domain types, box geometry and vocabularies.

Boxes are kept in center form (x, y, w, h); datasets usually ship corner
form (xmin, ymin, xmax, ymax) and are converted on ingestion.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class BoundingBox:
    """Axis-aligned box with center (x, y) and positive width/height."""

    x: float
    y: float
    w: float
    h: float

    def __post_init__(self):
        if not (self.w > 0 and self.h > 0):
            raise ValueError(f"box width/height must be > 0, got w={self.w}, h={self.h}")
        if not all(math.isfinite(v) for v in (self.x, self.y, self.w, self.h)):
            raise ValueError("box coordinates must be finite")

    @classmethod
    def from_corners(cls, xmin, ymin, xmax, ymax) -> "BoundingBox":
        return cls(
            x=(xmin + xmax) / 2.0,
            y=(ymin + ymax) / 2.0,
            w=xmax - xmin,
            h=ymax - ymin,
        )

    @property
    def corners(self) -> tuple[float, float, float, float]:
        """(xmin, ymin, xmax, ymax)."""
        return (
            self.x - self.w / 2.0,
            self.y - self.h / 2.0,
            self.x + self.w / 2.0,
            self.y + self.h / 2.0,
        )

    @property
    def area(self) -> float:
        return self.w * self.h


@dataclass(frozen=True)
class Detection:
    """One object detection with its appearance-feature handle.

    ``feature_ref`` is the row index of this detection's raw appearance
    vector in the feature store; ``category`` indexes the object
    vocabulary.
    """

    box: BoundingBox
    category: int
    score: float
    image_id: str
    feature_ref: int = -1
    detection_id: str = ""

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise ValueError(f"detection score must be in [0,1], got {self.score}")
        if self.category < 0:
            raise ValueError("category index must be >= 0")


@dataclass(frozen=True)
class TripletAnnotation:
    """A (subject, predicate, object) annotation.

    Box-level (full supervision) annotations carry both boxes;
    image-level (weak) annotations carry neither.
    """

    image_id: str
    subject_category: int
    predicate: int
    object_category: int
    subject_box: BoundingBox | None = None
    object_box: BoundingBox | None = None

    def __post_init__(self):
        if (self.subject_box is None) != (self.object_box is None):
            raise ValueError(
                "subject_box and object_box must be both present or both absent"
            )

    @property
    def has_boxes(self) -> bool:
        return self.subject_box is not None


@dataclass(frozen=True)
class Vocabulary:
    """Object and predicate name tables.

    When ``has_no_relation`` is set, a synthetic "no relation" class
    occupies predicate column R (one past the named predicates); it never
    appears in annotations.
    """

    object_names: tuple[str, ...]
    predicate_names: tuple[str, ...]
    has_no_relation: bool = False
    _object_index: dict = field(init=False, repr=False, compare=False)
    _predicate_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "object_names", tuple(self.object_names))
        object.__setattr__(self, "predicate_names", tuple(self.predicate_names))
        if len(set(self.object_names)) != len(self.object_names):
            raise ValueError("object names must be unique")
        if len(set(self.predicate_names)) != len(self.predicate_names):
            raise ValueError("predicate names must be unique")
        object.__setattr__(
            self, "_object_index", {n: i for i, n in enumerate(self.object_names)}
        )
        object.__setattr__(
            self, "_predicate_index", {n: i for i, n in enumerate(self.predicate_names)}
        )

    @property
    def num_objects(self) -> int:
        return len(self.object_names)

    @property
    def num_predicates(self) -> int:
        """Number of real predicates R (excludes the no-relation class)."""
        return len(self.predicate_names)

    @property
    def num_predicate_columns(self) -> int:
        """R, or R+1 with the no-relation class enabled."""
        return self.num_predicates + (1 if self.has_no_relation else 0)

    @property
    def no_relation_index(self) -> int | None:
        return self.num_predicates if self.has_no_relation else None

    def object_index(self, name: str) -> int:
        try:
            return self._object_index[name]
        except KeyError:
            raise KeyError(f"unknown object category {name!r}") from None

    def predicate_index(self, name: str) -> int:
        try:
            return self._predicate_index[name]
        except KeyError:
            raise KeyError(f"unknown predicate {name!r}") from None


def iou(a: BoundingBox, b: BoundingBox) -> float:
    """Intersection over union of two boxes; 0 when disjoint or touching."""
    ax0, ay0, ax1, ay1 = a.corners
    bx0, by0, bx1, by1 = b.corners
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def union_box(a: BoundingBox, b: BoundingBox) -> BoundingBox:
    """Tightest axis-aligned box enclosing both inputs."""
    ax0, ay0, ax1, ay1 = a.corners
    bx0, by0, bx1, by1 = b.corners
    return BoundingBox.from_corners(
        min(ax0, bx0), min(ay0, by0), max(ax1, bx1), max(ay1, by1)
    )


def spatial_vector(subject: BoundingBox, obj: BoundingBox) -> np.ndarray:
    """6-d spatial configuration of an ordered box pair.

    Components: renormalized center translation (2), size ratio
    sqrt(w_o*h_o / (w_s*h_s)), IoU, and the two aspect ratios.  Every term
    is dimensionless, so the vector is invariant to uniform rescaling of
    both boxes.
    """
    scale = math.sqrt(subject.w * subject.h)
    return np.array(
        [
            (obj.x - subject.x) / scale,
            (obj.y - subject.y) / scale,
            math.sqrt((obj.w * obj.h) / (subject.w * subject.h)),
            iou(subject, obj),
            subject.w / subject.h,
            obj.w / obj.h,
        ],
        dtype=np.float64,
    )
