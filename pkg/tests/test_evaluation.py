import itertools

import numpy as np
import pytest

from visrel import (
    BoundingBox,
    EvalConfig,
    EvalReport,
    PredictedTriplet,
    RankedCandidate,
    RetrievalQuery,
    TripletAnnotation,
    average_precision,
    recall_at_x,
    retrieval_map,
    topk_accuracy,
)
from visrel.evaluation import (
    format_report_table,
    max_match_count,
    report_json_dict,
)


def box(x, y, w=4.0, h=4.0):
    return BoundingBox(x=x, y=y, w=w, h=h)


def gt_triplet(image_id, sbox, obox, s=0, p=0, o=1):
    return TripletAnnotation(
        image_id=image_id,
        subject_category=s,
        predicate=p,
        object_category=o,
        subject_box=sbox,
        object_box=obox,
    )


def pred_triplet(image_id, sbox, obox, score, s=0, p=0, o=1):
    return PredictedTriplet(
        image_id=image_id,
        subject_category=s,
        predicate=p,
        object_category=o,
        subject_box=sbox,
        object_box=obox,
        score=score,
    )


def brute_force_ap(ranking, positives, query, config):
    """AP recomputed from scratch by walking prefixes of the sorted list."""
    from visrel.evaluation import _candidate_matches_gt

    order = sorted(range(len(ranking)), key=lambda i: (-ranking[i].score, i))
    consumed = [False] * len(positives)
    hits = 0
    total = 0.0
    for rank, idx in enumerate(order, start=1):
        cand = ranking[idx]
        best, best_q = -1, -1.0
        for g, gt in enumerate(positives):
            if consumed[g]:
                continue
            ok, q = _candidate_matches_gt(
                cand, gt, config.localization, config.iou_threshold
            )
            if ok and q > best_q:
                best, best_q = g, q
        if best >= 0:
            consumed[best] = True
            hits += 1
            total += hits / rank
    return total / len(positives) if positives else 0.0


class TestRecallAtX:
    def test_exact_predictions_recall_one(self):
        gt = {
            "im0": [gt_triplet("im0", box(0, 0), box(10, 0))],
            "im1": [gt_triplet("im1", box(5, 5), box(15, 5), p=1)],
        }
        preds = {
            image_id: [
                pred_triplet(g.image_id, g.subject_box, g.object_box, 0.9, p=g.predicate)
                for g in gts
            ]
            for image_id, gts in gt.items()
        }
        report = recall_at_x(preds, gt, EvalConfig(x=50))
        assert report.value == 1.0
        assert report.num_gt == 2 and report.num_matched == 2

    def test_no_predictions_recall_zero(self):
        gt = {"im0": [gt_triplet("im0", box(0, 0), box(10, 0))]}
        report = recall_at_x({}, gt, EvalConfig(x=50))
        assert report.value == 0.0

    def test_rank_cutoff_half_recall(self):
        # 2 GT; the only correct prediction inside x=1 matches GT#1
        sbox1, obox1 = box(0, 0), box(10, 0)
        sbox2, obox2 = box(50, 50), box(60, 50)
        gt = {
            "im0": [
                gt_triplet("im0", sbox1, obox1),
                gt_triplet("im0", sbox2, obox2),
            ]
        }
        overlap = box(0, 1)  # IoU 0.6 with sbox1
        preds = {
            "im0": [
                pred_triplet("im0", overlap, obox1, 0.9),
                pred_triplet("im0", box(100, 100), box(110, 100), 0.8),
                pred_triplet("im0", sbox2, obox2, 0.7),
            ]
        }
        report = recall_at_x(preds, gt, EvalConfig(x=1))
        assert report.value == 0.5
        # brute-force bipartite matching agrees on the kept prefix
        kept = preds["im0"][:1]
        assert max_match_count(kept, gt["im0"], "relationship", 0.5) == 1

    def test_monotone_in_x(self):
        rng = np.random.default_rng(0)
        gt = {}
        preds = {}
        for i in range(6):
            image_id = f"im{i}"
            gts, ps = [], []
            for g in range(int(rng.integers(1, 4))):
                sb = box(float(rng.uniform(0, 50)), float(rng.uniform(0, 50)))
                ob = box(float(rng.uniform(0, 50)), float(rng.uniform(0, 50)))
                gts.append(gt_triplet(image_id, sb, ob, p=int(rng.integers(2))))
            for _ in range(int(rng.integers(0, 8))):
                target = gts[int(rng.integers(len(gts)))]
                jitter = float(rng.uniform(0, 3))
                ps.append(
                    pred_triplet(
                        image_id,
                        box(target.subject_box.x + jitter, target.subject_box.y),
                        target.object_box,
                        float(rng.uniform()),
                        p=target.predicate if rng.uniform() < 0.7 else 1 - target.predicate,
                    )
                )
            gt[image_id] = gts
            preds[image_id] = ps
        values = [
            recall_at_x(preds, gt, EvalConfig(x=x)).value for x in (1, 2, 4, 8, 16)
        ]
        assert all(b >= a - 1e-12 for a, b in zip(values, values[1:]))

    def test_rank_only_scores(self):
        gt = {"im0": [gt_triplet("im0", box(0, 0), box(10, 0))]}
        base = {
            "im0": [
                pred_triplet("im0", box(30, 30), box(40, 30), 0.2),
                pred_triplet("im0", box(0, 0), box(10, 0), 0.1),
            ]
        }
        transformed = {
            "im0": [
                PredictedTriplet(
                    image_id=p.image_id,
                    subject_category=p.subject_category,
                    predicate=p.predicate,
                    object_category=p.object_category,
                    subject_box=p.subject_box,
                    object_box=p.object_box,
                    score=float(np.exp(5 * p.score)),
                )
                for p in base["im0"]
            ]
        }
        for x in (1, 2):
            a = recall_at_x(base, gt, EvalConfig(x=x)).value
            b = recall_at_x(transformed, gt, EvalConfig(x=x)).value
            assert a == b

    def test_predicate_mode_ignores_boxes(self):
        g = gt_triplet("im0", box(0, 0), box(10, 0))
        wrong_boxes = pred_triplet("im0", box(80, 80), box(90, 80), 0.9)
        report = recall_at_x(
            {"im0": [wrong_boxes]}, {"im0": [g]}, EvalConfig(x=1, mode="predicate")
        )
        assert report.value == 1.0

    def test_phrase_mode_uses_union_boxes(self):
        g = gt_triplet("im0", box(0, 0), box(10, 0))
        # individually shifted boxes whose union still overlaps well
        p = pred_triplet("im0", box(0.5, 0), box(9.5, 0), 0.9)
        phrase = recall_at_x(
            {"im0": [p]}, {"im0": [g]}, EvalConfig(x=1, mode="phrase")
        )
        assert phrase.value == 1.0

    def test_boxless_gt_rejected_outside_predicate_mode(self):
        weak = TripletAnnotation(
            image_id="im0", subject_category=0, predicate=0, object_category=1
        )
        with pytest.raises(ValueError):
            recall_at_x({}, {"im0": [weak]}, EvalConfig(x=1, mode="relationship"))
        report = recall_at_x({}, {"im0": [weak]}, EvalConfig(x=1, mode="predicate"))
        assert report.value == 0.0

    def test_greedy_never_exceeds_max_matching(self):
        rng = np.random.default_rng(1)
        from visrel.evaluation import _greedy_match_count

        for _ in range(200):
            gts = [
                gt_triplet(
                    "im0",
                    box(float(rng.uniform(0, 20)), 0),
                    box(float(rng.uniform(0, 20)), 10),
                    p=int(rng.integers(2)),
                )
                for _ in range(int(rng.integers(1, 5)))
            ]
            preds = []
            for _ in range(int(rng.integers(0, 6))):
                target = gts[int(rng.integers(len(gts)))]
                preds.append(
                    pred_triplet(
                        "im0",
                        box(target.subject_box.x + float(rng.uniform(0, 2)), 0),
                        target.object_box,
                        float(rng.uniform()),
                        p=int(rng.integers(2)),
                    )
                )
            preds = sorted(preds, key=lambda p: -p.score)
            greedy = _greedy_match_count(preds, gts, "relationship", 0.5)
            exact = max_match_count(preds, gts, "relationship", 0.5)
            assert greedy <= exact
            assert greedy == exact  # holds on all generated <= 4 GT cases


class TestAveragePrecision:
    def query(self):
        return RetrievalQuery(0, 0, 1)

    def config(self, **kw):
        return EvalConfig(x=50, **kw)

    def ranked(self, image_id, sbox, obox, score):
        return RankedCandidate(
            image_id=image_id, subject_box=sbox, object_box=obox, score=score
        )

    def test_all_positives_first(self):
        gts = [
            gt_triplet("im0", box(0, 0), box(10, 0)),
            gt_triplet("im1", box(0, 0), box(10, 0)),
        ]
        ranking = [
            self.ranked("im0", box(0, 0), box(10, 0), 0.9),
            self.ranked("im1", box(0, 0), box(10, 0), 0.8),
            self.ranked("im0", box(50, 50), box(60, 50), 0.7),
        ]
        ap, hits = average_precision(ranking, gts, self.query(), self.config())
        assert ap == 1.0 and hits == 2

    def test_neg_then_pos_gives_half(self):
        gts = [gt_triplet("im0", box(0, 0), box(10, 0))]
        ranking = [
            self.ranked("im0", box(50, 50), box(60, 50), 0.9),
            self.ranked("im0", box(0, 0), box(10, 0), 0.8),
        ]
        ap, _ = average_precision(ranking, gts, self.query(), self.config())
        assert abs(ap - 0.5) < 1e-12

    def test_pos_neg_pos_gives_five_sixths(self):
        gts = [
            gt_triplet("im0", box(0, 0), box(10, 0)),
            gt_triplet("im1", box(0, 0), box(10, 0)),
        ]
        ranking = [
            self.ranked("im0", box(0, 0), box(10, 0), 0.9),
            self.ranked("im2", box(0, 0), box(10, 0), 0.8),  # no GT in im2
            self.ranked("im1", box(0, 0), box(10, 0), 0.7),
        ]
        ap, hits = average_precision(ranking, gts, self.query(), self.config())
        assert abs(ap - 5.0 / 6.0) < 1e-12 and hits == 2

    def test_missed_gt_contribute_zero_terms(self):
        gts = [
            gt_triplet("im0", box(0, 0), box(10, 0)),
            gt_triplet("im1", box(0, 0), box(10, 0)),
        ]
        ranking = [self.ranked("im0", box(0, 0), box(10, 0), 0.9)]
        ap, hits = average_precision(ranking, gts, self.query(), self.config())
        assert abs(ap - 0.5) < 1e-12 and hits == 1

    def test_matches_prefix_brute_force_on_random_instances(self):
        rng = np.random.default_rng(2)
        for _ in range(100):
            num_gt = int(rng.integers(1, 5))
            gts = [
                gt_triplet(
                    f"im{int(rng.integers(3))}",
                    box(float(rng.uniform(0, 30)), 0),
                    box(float(rng.uniform(0, 30)), 10),
                )
                for _ in range(num_gt)
            ]
            ranking = []
            for _ in range(int(rng.integers(0, 20))):
                if rng.uniform() < 0.5 and gts:
                    target = gts[int(rng.integers(len(gts)))]
                    ranking.append(
                        RankedCandidate(
                            image_id=target.image_id,
                            subject_box=box(
                                target.subject_box.x + float(rng.uniform(0, 2)), 0
                            ),
                            object_box=target.object_box,
                            score=float(rng.uniform()),
                        )
                    )
                else:
                    ranking.append(
                        self.ranked(
                            f"im{int(rng.integers(3))}",
                            box(float(rng.uniform(0, 30)), 50),
                            box(float(rng.uniform(0, 30)), 60),
                            float(rng.uniform()),
                        )
                    )
            config = self.config()
            ap, _ = average_precision(ranking, gts, self.query(), config)
            oracle = brute_force_ap(ranking, gts, self.query(), config)
            assert abs(ap - oracle) < 1e-12

    def test_with_gt_localization_ranks_annotated_pairs(self):
        gts = [gt_triplet("im0", box(0, 0), box(10, 0))]
        right = RankedCandidate(
            image_id="im0",
            subject_box=box(0, 0),
            object_box=box(10, 0),
            score=0.4,
            labels=(0, 0, 1),
        )
        wrong_label = RankedCandidate(
            image_id="im0",
            subject_box=box(0, 0),
            object_box=box(10, 0),
            score=0.9,
            labels=(0, 1, 1),
        )
        config = EvalConfig(x=50, localization="gt")
        ap, hits = average_precision(
            [wrong_label, right], gts, self.query(), config
        )
        assert hits == 1 and abs(ap - 0.5) < 1e-12


class TestRetrievalMap:
    def test_zero_gt_queries_excluded_and_reported(self):
        q_hit = RetrievalQuery(0, 0, 1)
        q_empty = RetrievalQuery(0, 1, 1)
        ranking = [
            RankedCandidate(
                image_id="im0", subject_box=box(0, 0), object_box=box(10, 0), score=0.9
            )
        ]
        rankings = {q_hit: ranking, q_empty: ranking}
        positives = {q_hit: [gt_triplet("im0", box(0, 0), box(10, 0))]}
        report = retrieval_map(rankings, positives, EvalConfig(x=50))
        assert report.value == 1.0
        assert report.excluded == [(0, 1, 1)]
        assert (0, 1, 1) not in report.per_group

    def test_mean_over_queries_unweighted(self):
        q1 = RetrievalQuery(0, 0, 1)
        q2 = RetrievalQuery(0, 1, 1)
        pos1 = [gt_triplet("im0", box(0, 0), box(10, 0))]
        pos2 = [gt_triplet("im0", box(0, 0), box(10, 0), p=1)]
        hit = RankedCandidate(
            image_id="im0", subject_box=box(0, 0), object_box=box(10, 0), score=0.9
        )
        miss = RankedCandidate(
            image_id="im0", subject_box=box(50, 50), object_box=box(60, 50), score=0.9
        )
        rankings = {q1: [hit], q2: [miss, hit]}
        positives = {q1: pos1, q2: pos2}
        report = retrieval_map(rankings, positives, EvalConfig(x=50))
        assert abs(report.value - (1.0 + 0.5) / 2) < 1e-12


class TestTopkAccuracy:
    def test_full_list_always_hits(self):
        predicted = [[0, 1, 2], [2, 1, 0], [1, 0, 2]]
        gt = [{2}, {0}, {1}]
        assert topk_accuracy(predicted, gt, k=3).value == 1.0

    def test_constant_wrong_is_zero(self):
        predicted = [[0], [0], [0]]
        gt = [{1}, {2}, {1}]
        assert topk_accuracy(predicted, gt, k=1).value == 0.0

    def test_two_of_three(self):
        predicted = [[1], [2], [0]]
        gt = [{1}, {2}, {2}]
        report = topk_accuracy(predicted, gt, k=1)
        assert abs(report.value - 2.0 / 3.0) < 1e-12

    def test_validation(self):
        with pytest.raises(ValueError):
            topk_accuracy([[0]], [], k=1)
        with pytest.raises(ValueError):
            topk_accuracy([[0]], [set()], k=1)
        with pytest.raises(ValueError):
            topk_accuracy([[0]], [{0}], k=0)


class TestReports:
    def test_report_bounds_enforced(self):
        with pytest.raises(ValueError):
            EvalReport(metric="m", value=1.5)
        with pytest.raises(ValueError):
            EvalReport(metric="m", value=0.5, num_gt=1, num_matched=2)

    def test_table_and_json_round_trip(self):
        report = EvalReport(
            metric="relationship_recall@50",
            value=0.5,
            num_gt=4,
            num_matched=2,
            num_predictions=8,
            per_group={"im0": {"gt": 4, "matched": 2}},
        )
        text = format_report_table([report])
        assert "relationship_recall@50" in text and "0.5000" in text
        as_json = report_json_dict(report)
        assert as_json["value"] == 0.5
        assert as_json["per_group"]["im0"] == {"gt": 4, "matched": 2}

    def test_config_validation(self):
        with pytest.raises(ValueError):
            EvalConfig(x=0)
        with pytest.raises(ValueError):
            EvalConfig(iou_threshold=0.0)
        with pytest.raises(ValueError):
            EvalConfig(mode="other")
        with pytest.raises(ValueError):
            EvalConfig(localization="center")
