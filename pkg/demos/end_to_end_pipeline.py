"""The whole pipeline as library calls, on a synthetic spatial dataset.

Detections and appearance features arrive precomputed (here planted);
the toolkit builds candidate pairs, fits the descriptor models, trains
a fully-supervised and a weakly-supervised predicate classifier, and
scores both with the detection-recall protocol.

Run with: python3 demos/end_to_end_pipeline.py
"""

import numpy as np

from visrel import (
    CandidateConfig,
    EvalConfig,
    FwConfig,
    GmmConfig,
    ScoreWeights,
    build_bags,
    build_image_pairs,
    descriptor_matrix,
    detection_predictions,
    fit_gmm,
    fw_train,
    image_pair_scores,
    match_full_annotations,
    recall_at_x,
    spatial_vector,
    train_ridge,
)
from visrel.evaluation import format_report_table
from visrel.features import l2_normalize, pca_fit
from visrel.synth import make_planted_dataset

dataset = make_planted_dataset(
    num_train=60, num_val=8, num_test=12, feature_dim=16, seed=1
).dataset
vocabulary = dataset.vocabulary
print(f"dataset: {sum(len(v) for v in dataset.splits.values())} images, "
      f"{vocabulary.num_objects} object classes, "
      f"{vocabulary.num_predicates} predicates")

print("\n1. candidate pairs per image (score filter + per-class NMS)")
config = CandidateConfig()
pairs_by_image = {
    image_id: build_image_pairs(dataset.detections_for(image_id), config)
    for split in ("train", "test")
    for image_id in dataset.images(split)
}
n_train_pairs = sum(
    len(pairs_by_image[i]) for i in dataset.images("train")
)
print(f"   {n_train_pairs} train pairs over "
      f"{len(dataset.images('train'))} images")

print("\n2. descriptor models from the train split")
anns_by_image = dataset.annotations_by_image("train")
annotated = {
    (a.subject_category, a.object_category)
    for anns in anns_by_image.values() for a in anns
}
spatial = np.stack([
    spatial_vector(p.subject.box, p.object.box)
    for image_id in dataset.images("train")
    for p in pairs_by_image[image_id]
    if p.categories in annotated
])
gmm = fit_gmm(spatial, k=24, config=GmmConfig(seed=0))
appearance = l2_normalize(np.stack([
    dataset.features.matrix[d.feature_ref]
    for image_id in dataset.images("train")
    for d in dataset.detections_for(image_id)
]))
pca = pca_fit(appearance, p=8)
print(f"   spatial mixture k={gmm.k} on {len(spatial)} annotated pairs; "
      f"appearance PCA p=8; descriptor dim {gmm.k + 16}")


def descriptors(image_id):
    pairs = pairs_by_image[image_id]
    boxes = [(p.subject.box, p.object.box) for p in pairs]
    feats = [
        (dataset.features.matrix[p.subject.feature_ref],
         dataset.features.matrix[p.object.feature_ref])
        for p in pairs
    ]
    return descriptor_matrix(gmm, pca, boxes, feats)


x_by_image = {i: descriptors(i) for i in pairs_by_image}

print("\n3. full supervision: match annotated boxes to candidate pairs")
xs, zs = [], []
for image_id in dataset.images("train"):
    pairs = pairs_by_image[image_id]
    match = match_full_annotations(
        anns_by_image.get(image_id, []),
        [(p.subject.box, p.object.box) for p in pairs],
        [p.categories for p in pairs],
        vocabulary,
    )
    x_rows, z = match.training_set(x_by_image[image_id])
    xs.append(x_rows)
    zs.append(z)
full = train_ridge(np.vstack(xs), np.vstack(zs), 1e-3,
                   vocabulary=vocabulary)
print(f"   {sum(len(z) for z in zs)} matched pair labels")

print("\n4. weak supervision: the same images, labels only")
train_images = sorted(dataset.images("train"))
flat_pairs = [p for i in train_images for p in pairs_by_image[i]]
x = np.vstack([x_by_image[i] for i in train_images])
bags, skipped = build_bags(
    [a for i in train_images for a in anns_by_image.get(i, [])],
    [p.image_id for p in flat_pairs],
    [p.categories for p in flat_pairs],
)
weak = fw_train(
    x, bags, vocabulary.num_predicate_columns,
    FwConfig(lam=1e-3, max_iters=500, gap_tol=1e-5,
             negative_sampling_rate=0.5),
    no_relation_index=vocabulary.no_relation_index,
    row_scores=np.asarray([p.score_product for p in flat_pairs]),
    vocabulary=vocabulary,
).model
print(f"   {len(bags)} bags ({skipped} annotations had no matching pair)")

print("\n5. recall@50 on the test split")
weights = ScoreWeights()
gt = dataset.annotations_by_image("test")
for name, model in (("full", full), ("weak", weak)):
    predictions = {}
    for image_id in dataset.images("test"):
        scores = image_pair_scores(
            image_id, pairs_by_image[image_id], model,
            x=x_by_image[image_id],
            num_predicates=vocabulary.num_predicates,
        )
        predictions[image_id] = detection_predictions(scores, weights)
    report = recall_at_x(predictions, gt, EvalConfig(x=50))
    print(f"\n   {name} supervision:")
    for line in format_report_table([report]).splitlines():
        print("   " + line)
