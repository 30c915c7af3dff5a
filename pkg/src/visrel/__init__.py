"""Visual-relation classifiers from precomputed object detections.

Pairs of detected objects are described by a spatial GMM-responsibility
block plus PCA-reduced appearance; predicate classifiers are trained by
ridge regression under full supervision or by Frank-Wolfe discriminative
clustering under image-level (weak) supervision, and evaluated with
detection-recall and retrieval-mAP protocols.
"""

from .candidates import (
    CandidateConfig,
    PairCandidate,
    build_image_pairs,
    enumerate_pairs,
    nms,
    select_candidates,
)
from .core import (
    BoundingBox,
    Detection,
    TripletAnnotation,
    Vocabulary,
    iou,
    spatial_vector,
    union_box,
)
from .errors import DataError, InsufficientDataError, QueryMismatchError
from .evaluation import (
    EvalConfig,
    EvalReport,
    PredictedTriplet,
    RankedCandidate,
    RetrievalQuery,
    average_precision,
    recall_at_x,
    retrieval_map,
    topk_accuracy,
)
from .features import (
    PairDescriptor,
    PcaModel,
    descriptor_matrix,
    make_pair_descriptor,
    pca_fit,
    pca_project,
)
from .gmm import GmmConfig, GmmModel, fit_gmm, responsibilities
from .io import (
    Dataset,
    FeatureStore,
    load_dataset,
    load_model,
    save_dataset,
    save_model,
)
from .scoring import (
    LanguageScoreTable,
    ScoreWeights,
    detection_predictions,
    image_pair_scores,
    predict_relations,
    triplet_score,
    tune_weights,
)
from .supervised import (
    RelationModel,
    RidgeFactor,
    match_full_annotations,
    train_noisy,
    train_ridge,
)
from .synth import make_planted_dataset, planted_descriptor_problem
from .weak import (
    AssignmentMatrix,
    Bag,
    FwConfig,
    build_bags,
    eliminate_w_objective,
    fw_train,
    lmo,
    sample_negatives,
)

__version__ = "0.1.0"

__all__ = [
    "AssignmentMatrix",
    "Bag",
    "BoundingBox",
    "CandidateConfig",
    "DataError",
    "Dataset",
    "Detection",
    "EvalConfig",
    "EvalReport",
    "FeatureStore",
    "FwConfig",
    "GmmConfig",
    "GmmModel",
    "InsufficientDataError",
    "LanguageScoreTable",
    "PairCandidate",
    "PairDescriptor",
    "PcaModel",
    "PredictedTriplet",
    "QueryMismatchError",
    "RankedCandidate",
    "RelationModel",
    "RetrievalQuery",
    "RidgeFactor",
    "ScoreWeights",
    "TripletAnnotation",
    "Vocabulary",
    "average_precision",
    "build_bags",
    "build_image_pairs",
    "descriptor_matrix",
    "detection_predictions",
    "eliminate_w_objective",
    "enumerate_pairs",
    "fit_gmm",
    "fw_train",
    "image_pair_scores",
    "iou",
    "lmo",
    "load_dataset",
    "load_model",
    "make_pair_descriptor",
    "make_planted_dataset",
    "match_full_annotations",
    "nms",
    "pca_fit",
    "pca_project",
    "planted_descriptor_problem",
    "predict_relations",
    "recall_at_x",
    "responsibilities",
    "retrieval_map",
    "sample_negatives",
    "save_dataset",
    "save_model",
    "select_candidates",
    "spatial_vector",
    "topk_accuracy",
    "train_noisy",
    "train_ridge",
    "triplet_score",
    "tune_weights",
    "union_box",
]
