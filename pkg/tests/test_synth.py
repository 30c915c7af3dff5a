"""Tests for the synthetic data generators."""

import numpy as np
import pytest

from visrel.synth import (
    PLANTED_OBJECTS,
    PLANTED_PREDICATES,
    make_planted_dataset,
    make_tiny_dataset,
    planted_descriptor_problem,
)


def small_problem(**kwargs):
    defaults = dict(num_images=40, dim=12, test_per_class=5, seed=3)
    defaults.update(kwargs)
    return planted_descriptor_problem(**defaults)


class TestPlantedDescriptorProblem:
    def test_shapes_and_counts(self):
        prob = small_problem()
        assert len(prob.bags) == 40
        assert prob.x.shape == (sum(len(b.rows) for b in prob.bags), 12)
        assert prob.row_predicate.shape == (prob.x.shape[0],)
        assert prob.test_x.shape == (5 * 5, 12)
        assert prob.test_labels.shape == (25,)
        for r in range(prob.num_predicates):
            assert int(np.sum(prob.test_labels == r)) == 5
        assert prob.centers.shape == (5, 12)

    def test_bags_partition_the_rows(self):
        prob = small_problem()
        seen = sorted(r for b in prob.bags for r in b.rows)
        assert seen == list(range(prob.x.shape[0]))

    def test_bag_sizes_within_range(self):
        prob = small_problem(bag_size_range=(3, 12))
        sizes = [len(b.rows) for b in prob.bags]
        assert min(sizes) >= 3
        assert max(sizes) <= 12

    def test_bag_predicates_cycle(self):
        prob = small_problem()
        for i, bag in enumerate(prob.bags):
            assert bag.predicate_index == i % prob.num_predicates

    def test_exactly_one_planted_row_per_bag(self):
        prob = small_problem()
        planted = dict(prob.planted_rows)
        assert len(planted) == len(prob.bags)
        for bag in prob.bags:
            marked = [r for r in bag.rows if prob.row_predicate[r] >= 0]
            assert len(marked) == 1
            row = marked[0]
            assert prob.row_predicate[row] == bag.predicate_index
            assert planted[row] == bag.predicate_index

    def test_centers_orthogonal_with_requested_norm(self):
        prob = small_problem(center_norm=4.5)
        gram = prob.centers @ prob.centers.T
        np.testing.assert_allclose(gram, 4.5**2 * np.eye(5), atol=1e-9)

    def test_planted_rows_sit_nearest_their_own_center(self):
        prob = small_problem()
        for row, r in prob.planted_rows:
            dists = np.linalg.norm(prob.centers - prob.x[row], axis=1)
            assert int(np.argmin(dists)) == r

    def test_background_rows_stay_near_origin(self):
        prob = small_problem(center_norm=4.5, background_sigma=0.25)
        background = prob.x[prob.row_predicate < 0]
        assert background.shape[0] > 0
        assert float(np.linalg.norm(background, axis=1).max()) < 4.5 / 2

    def test_tight_test_sigma_makes_classes_separable(self):
        prob = small_problem(test_sigma=0.2)
        dists = np.linalg.norm(
            prob.test_x[:, None, :] - prob.centers[None, :, :], axis=2
        )
        assert np.array_equal(np.argmin(dists, axis=1), prob.test_labels)

    def test_same_seed_reproduces(self):
        a = small_problem(seed=9)
        b = small_problem(seed=9)
        assert np.array_equal(a.x, b.x)
        assert np.array_equal(a.test_x, b.test_x)
        assert a.planted_rows == b.planted_rows
        assert [b1.rows for b1 in a.bags] == [b2.rows for b2 in b.bags]

    def test_seed_changes_the_draw(self):
        a = small_problem(seed=0)
        b = small_problem(seed=1)
        assert not np.array_equal(a.x[: min(len(a.x), len(b.x))],
                                  b.x[: min(len(a.x), len(b.x))])


def small_dataset(seed=1):
    return make_planted_dataset(
        num_train=12, num_val=4, num_test=4, feature_dim=8, seed=seed
    )


class TestMakePlantedDataset:
    def test_vocabulary_names_the_planted_world(self):
        ds = small_dataset().dataset
        assert ds.vocabulary.object_names == PLANTED_OBJECTS
        assert ds.vocabulary.predicate_names == PLANTED_PREDICATES
        assert ds.vocabulary.has_no_relation
        assert ds.vocabulary.num_predicate_columns == 6

    def test_split_sizes_and_disjoint_ids(self):
        ds = small_dataset().dataset
        assert len(ds.splits["train"]) == 12
        assert len(ds.splits["val"]) == 4
        assert len(ds.splits["test"]) == 4
        all_ids = [i for ids in ds.splits.values() for i in ids]
        assert len(all_ids) == len(set(all_ids))
        for split, ids in ds.splits.items():
            for image_id in ids:
                assert image_id.startswith(split)

    def test_one_boxed_annotation_per_image(self):
        ds = small_dataset().dataset
        for split, ids in ds.splits.items():
            anns = ds.annotations[split]
            assert sorted(a.image_id for a in anns) == sorted(ids)
            for ann in anns:
                assert ann.subject_box is not None
                assert ann.object_box is not None

    def test_planted_records_align_with_detections(self):
        pd = small_dataset()
        ds = pd.dataset
        assert sorted(p.image_id for p in pd.planted) == sorted(
            i for ids in ds.splits.values() for i in ids
        )
        for rec in pd.planted:
            dets = {d.detection_id: d for d in ds.detections[rec.image_id]}
            subj = dets[rec.subject_detection_id]
            obj = dets[rec.object_detection_id]
            ann = next(
                a for a in ds.annotations[rec.split]
                if a.image_id == rec.image_id
            )
            assert ann.subject_box == subj.box
            assert ann.object_box == obj.box
            assert ann.subject_category == subj.category
            assert ann.object_category == obj.category
            assert ann.predicate == ds.vocabulary.predicate_index(
                rec.predicate
            )

    def test_planted_detections_outscore_their_decoys(self):
        pd = small_dataset()
        for rec in pd.planted:
            dets = {
                d.detection_id: d
                for d in pd.dataset.detections[rec.image_id]
            }
            for star_id in (rec.subject_detection_id,
                            rec.object_detection_id):
                star = dets[star_id]
                decoys = [
                    d.score for d in dets.values()
                    if d.category == star.category
                    and d.detection_id != star_id
                ]
                assert all(star.score > s for s in decoys)

    def test_scores_respect_detector_floor(self):
        ds = make_planted_dataset(
            num_train=6, num_val=2, num_test=2, feature_dim=8,
            min_detector_score=0.6, seed=2,
        ).dataset
        for dets in ds.detections.values():
            for det in dets:
                assert 0.6 <= det.score <= 1.0

    def test_boxes_land_on_the_eighth_grid(self):
        # the serialized form stores corners; eighths survive the
        # center-corner round trip bit-exactly
        ds = small_dataset().dataset
        for dets in ds.detections.values():
            for det in dets:
                for v in (det.box.x, det.box.y, det.box.w, det.box.h):
                    assert v * 8.0 == round(v * 8.0)

    def test_geometry_realizes_each_predicate(self):
        pd = small_dataset()
        seen = set()
        for rec in pd.planted:
            dets = {
                d.detection_id: d
                for d in pd.dataset.detections[rec.image_id]
            }
            s = dets[rec.subject_detection_id].box
            o = dets[rec.object_detection_id].box
            seen.add(rec.predicate)
            if rec.predicate == "left of":
                assert o.x + o.w / 2 < s.x - s.w / 2
            elif rec.predicate == "right of":
                assert o.x - o.w / 2 > s.x + s.w / 2
            elif rec.predicate == "above":
                assert o.y + o.h / 2 < s.y - s.h / 2
            elif rec.predicate == "below":
                assert o.y - o.h / 2 > s.y + s.h / 2
            else:
                assert rec.predicate == "inside"
                assert o.x - o.w / 2 > s.x - s.w / 2
                assert o.x + o.w / 2 < s.x + s.w / 2
                assert o.y - o.h / 2 > s.y - s.h / 2
                assert o.y + o.h / 2 < s.y + s.h / 2
        assert seen == set(PLANTED_PREDICATES)

    def test_features_cover_every_detection(self):
        ds = small_dataset().dataset
        det_ids = [
            d.detection_id
            for dets in ds.detections.values() for d in dets
        ]
        assert sorted(ds.features.ids) == sorted(det_ids)
        assert ds.features.matrix.shape == (len(det_ids), 8)
        for dets in ds.detections.values():
            for det in dets:
                assert ds.features.ids[det.feature_ref] == det.detection_id

    def test_features_cluster_by_category(self):
        ds = small_dataset().dataset
        rows = {i: r for i, r in zip(ds.features.ids, ds.features.matrix)}
        by_cat: dict[int, list[np.ndarray]] = {}
        for dets in ds.detections.values():
            for det in dets:
                by_cat.setdefault(det.category, []).append(
                    rows[det.detection_id]
                )
        cats = sorted(by_cat)
        means = np.asarray([np.mean(by_cat[c], axis=0) for c in cats])
        for dets in ds.detections.values():
            for det in dets:
                dists = np.linalg.norm(
                    means - rows[det.detection_id], axis=1
                )
                assert cats[int(np.argmin(dists))] == det.category

    def test_same_seed_reproduces(self):
        a = small_dataset(seed=5)
        b = small_dataset(seed=5)
        assert a.dataset.vocabulary == b.dataset.vocabulary
        assert a.dataset.splits == b.dataset.splits
        assert a.dataset.detections == b.dataset.detections
        assert a.dataset.annotations == b.dataset.annotations
        assert a.dataset.features.ids == b.dataset.features.ids
        assert np.array_equal(
            a.dataset.features.matrix, b.dataset.features.matrix
        )
        assert a.planted == b.planted

    def test_seed_changes_the_layout(self):
        a = small_dataset(seed=0).dataset
        b = small_dataset(seed=1).dataset
        assert a.detections != b.detections

    def test_tiny_dataset_is_one_image_per_split(self):
        pd = make_tiny_dataset(seed=0)
        ds = pd.dataset
        assert {s: len(ids) for s, ids in ds.splits.items()} == {
            "train": 1, "val": 1, "test": 1,
        }
        assert ds.features.matrix.shape[1] == 8
        assert len(pd.planted) == 3
