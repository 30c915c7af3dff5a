"""Command-line pipeline driver.

Subcommands cover the full loop: synthesize a benchmark dataset, fit the
spatial GMM and appearance PCA, featurize candidate pairs, train (full /
weak / noisy), tune score weights, score, and evaluate.  Every run with
fixed seeds and inputs is bit-reproducible: outputs carry no timestamps
and all JSON is canonically serialized.

Exit codes: 0 success, 1 usage error, 2 data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import io as vio
from .candidates import CandidateConfig, build_image_pairs
from .core import spatial_vector
from .errors import DataError
from .evaluation import (
    EvalConfig,
    format_report_table,
    recall_at_x,
    report_json_dict,
    retrieval_map,
)
from .features import descriptor_matrix, pca_fit
from .gmm import GmmConfig, fit_gmm
from .scoring import (
    DEFAULT_ALPHA_GRID,
    LanguageScoreTable,
    ScoreWeights,
    detection_predictions,
    image_pair_scores,
    retrieval_rankings,
    tune_weights,
)
from .supervised import match_full_annotations, train_noisy, train_ridge
from .synth import make_planted_dataset, make_tiny_dataset
from .weak import FwConfig, build_bags, fw_train


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _add_candidate_flags(p: argparse.ArgumentParser):
    p.add_argument("--score-threshold", type=float, default=0.3,
                   help="keep detections scoring above this")
    p.add_argument("--top-k", type=int, default=100,
                   help="consider at most this many detections per image")
    p.add_argument("--nms", type=float, default=0.3,
                   help="per-category NMS IoU threshold")
    p.add_argument("--max-pairs", type=int, default=None,
                   help="cap ordered pairs per image by score product")
    p.add_argument("--no-filter", action="store_true",
                   help="treat detections as pre-filtered; skip selection")


def _candidate_config(args) -> CandidateConfig:
    return CandidateConfig(
        score_threshold=args.score_threshold,
        top_k=args.top_k,
        nms_threshold=args.nms,
        max_pairs_per_image=args.max_pairs,
    )


def _add_global_flags(p: argparse.ArgumentParser, suppress: bool):
    # the same flags live on the root parser and every subparser so they
    # may appear on either side of the subcommand; subparser copies use
    # SUPPRESS defaults so they never clobber a value parsed earlier
    d = argparse.SUPPRESS if suppress else None
    p.add_argument("--seed", type=int,
                   default=d if suppress else 0,
                   help="seed for every random draw")
    p.add_argument("--threads", type=int, default=d,
                   help="cap BLAS/LAPACK threads")
    p.add_argument("--config", type=Path, default=d,
                   help="JSON file of flag defaults for the subcommand")


def build_parser():
    parser = _Parser(prog="visrel", description=__doc__)
    _add_global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    commands = {}

    def command(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        _add_global_flags(p, suppress=True)
        commands[name] = p
        return p

    p = command("synth", help="generate a seeded synthetic dataset")
    p.add_argument("--preset", choices=("planted-bags", "tiny"),
                   default="planted-bags")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--num-train", type=int, default=120)
    p.add_argument("--num-val", type=int, default=12)
    p.add_argument("--num-test", type=int, default=16)
    p.add_argument("--feature-dim", type=int, default=32)
    p.add_argument("--feature-noise", type=float, default=0.05)

    p = command("fit-gmm", help="fit the spatial mixture on candidate pairs")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--k", type=int, default=400)
    p.add_argument("--max-iters", type=int, default=200)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--annotated-only", action="store_true",
                   help="use only pairs matching an annotated (s, o)")
    _add_candidate_flags(p)

    p = command("fit-pca", help="fit appearance PCA on split detections")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--p", type=int, default=300)

    p = command("featurize", help="build candidate pairs and descriptors")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--gmm", type=Path, required=True)
    p.add_argument("--pca", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", default="train")
    _add_candidate_flags(p)

    p = command("train-full", help="ridge training on box-level labels")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--pairs", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--lam", type=float, default=1e-3)
    p.add_argument("--lam-grid", default=None,
                   help="comma-separated candidates; needs --val-pairs")
    p.add_argument("--val-pairs", type=Path, default=None)
    p.add_argument("--val-split", default="val")
    p.add_argument("--iou", type=float, default=0.5,
                   help="annotation-to-pair matching threshold")
    p.add_argument("--negative-rate", type=float, default=0.0,
                   help="label this share of unmatched pairs no-relation")
    p.add_argument("--gmm", type=Path, default=None)
    p.add_argument("--pca", type=Path, default=None)

    p = command("train-weak", help="Frank-Wolfe training on image-level labels")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--pairs", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--lam", type=float, default=1e-3)
    p.add_argument("--negative-rate", type=float, default=0.5)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--gap-tol", type=float, default=1e-5)
    p.add_argument("--block-coordinate", action="store_true")
    p.add_argument("--save-assignment", type=Path, default=None,
                   help="also store the latent Z keyed by pair id")
    p.add_argument("--gmm", type=Path, default=None)
    p.add_argument("--pca", type=Path, default=None)

    p = command("train-noisy", help="pick one pair per bag at random, then ridge")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--pairs", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", default="train")
    p.add_argument("--lam", type=float, default=1e-3)
    p.add_argument("--negative-rate", type=float, default=0.5)
    p.add_argument("--gmm", type=Path, default=None)
    p.add_argument("--pca", type=Path, default=None)

    p = command("tune-weights", help="grid-search score weights on validation")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--pairs", type=Path, required=True,
                   help="featurized pairs of the validation split")
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", default="val")
    p.add_argument("--lang", type=Path, default=None)
    p.add_argument("--grid", default=None,
                   help="comma-separated alpha values, same for each weight")
    p.add_argument("--x", type=int, default=50)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--log-scores", action="store_true")

    p = command("score", help="emit scored (s, r, o) predictions")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--pairs", type=Path, required=True)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--weights", type=Path, default=None)
    p.add_argument("--lang", type=Path, default=None)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--suppress-no-relation", action="store_true")
    p.add_argument("--log-scores", action="store_true")

    p = command("eval-recall", help="recall@x detection evaluation")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--predictions", type=Path, default=None)
    p.add_argument("--pairs", type=Path, default=None)
    p.add_argument("--model", type=Path, default=None)
    p.add_argument("--weights", type=Path, default=None)
    p.add_argument("--lang", type=Path, default=None)
    p.add_argument("--mode", choices=("predicate", "phrase", "relationship"),
                   default="relationship")
    p.add_argument("--x", type=int, default=50)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--k", type=int, default=1)
    p.add_argument("--log-scores", action="store_true")

    p = command("eval-retrieval", help="triplet-query retrieval mAP")
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--split", default="test")
    p.add_argument("--pairs", type=Path, default=None)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--weights", type=Path, default=None)
    p.add_argument("--with-gt", action="store_true",
                   help="rank the annotated pairs themselves")
    p.add_argument("--localization",
                   choices=("gt", "union", "subj", "subj_obj"),
                   default="union")
    p.add_argument("--iou", type=float, default=0.3)
    p.add_argument("--filter-no-relation", action="store_true")

    return parser, commands


def _apply_config(parser, commands, argv):
    """Fold --config JSON into the active subcommand's defaults."""
    args, _ = parser.parse_known_args(argv)
    if args.config is None:
        return
    if args.command is None:
        parser.error("--config requires a subcommand")
    try:
        overrides = json.loads(Path(args.config).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{args.config}: {exc}") from exc
    if not isinstance(overrides, dict):
        raise DataError(f"{args.config}: config must be a JSON object")
    subparser = commands[args.command]
    known = {a.dest for a in subparser._actions} - {"help", "config"}
    unknown = sorted(set(overrides) - known)
    if unknown:
        parser.error(
            f"--config keys not recognized by {args.command}: "
            + ", ".join(unknown)
        )
    sub_overrides = {
        k: v for k, v in overrides.items() if k not in ("seed", "threads")
    }
    subparser.set_defaults(**sub_overrides)
    top = {k: v for k, v in overrides.items() if k in ("seed", "threads")}
    if top:
        parser.set_defaults(**top)


def _load_relation_model(path):
    model = vio.load_model(path, expected_kind="relation_model")
    if model.vocabulary is None:
        raise DataError(f"{path}: model carries no vocabulary")
    return model


def _split_pairs(dataset, args, require=True):
    pair_map = vio.load_pair_set(args.pairs, dataset)
    images = set(dataset.images(args.split)) if hasattr(args, "split") else None
    if images is not None:
        extra = sorted(set(pair_map) - images)
        if extra and require:
            raise DataError(
                f"{args.pairs}: pairs for images outside split "
                f"{args.split!r}: {extra[:3]}"
            )
    return pair_map


def _concat_pairs(pair_map):
    """Flatten {image: (pairs, x)} into aligned global lists."""
    pairs = []
    images = []
    categories = []
    rows = []
    for image_id in sorted(pair_map):
        image_pairs, x = pair_map[image_id]
        for pair, row in zip(image_pairs, x):
            pairs.append(pair)
            images.append(image_id)
            categories.append(pair.categories)
            rows.append(row)
    x = np.stack(rows) if rows else np.zeros((0, 1))
    return pairs, images, categories, x


def _weak_annotations(dataset, split):
    anns = dataset.annotations.get(split, [])
    if not anns:
        raise DataError(f"split {split!r} carries no annotations")
    return anns


def _language_table(args, vocabulary):
    if getattr(args, "lang", None) is None:
        return None
    return LanguageScoreTable.from_csv(args.lang, vocabulary)


def _score_weights(args):
    if getattr(args, "weights", None) is None:
        return ScoreWeights()
    return vio.load_model(args.weights, expected_kind="score_weights")


def _write_report(path, report):
    Path(path).write_text(
        vio.canonical_json(report_json_dict(report)) + "\n", encoding="utf-8"
    )
    print(format_report_table([report]))


def _cmd_synth(args):
    if args.preset == "tiny":
        built = make_tiny_dataset(seed=args.seed)
    else:
        built = make_planted_dataset(
            num_train=args.num_train,
            num_val=args.num_val,
            num_test=args.num_test,
            feature_dim=args.feature_dim,
            feature_noise=args.feature_noise,
            seed=args.seed,
        )
    vio.save_dataset(args.out, built.dataset)
    with open(args.out / "planted.jsonl", "w", encoding="utf-8") as fh:
        for rec in built.planted:
            fh.write(
                vio.canonical_json(
                    {
                        "image_id": rec.image_id,
                        "split": rec.split,
                        "subject_detection_id": rec.subject_detection_id,
                        "object_detection_id": rec.object_detection_id,
                        "predicate": rec.predicate,
                    }
                )
                + "\n"
            )
    print(f"wrote {args.preset} dataset to {args.out}")
    return 0


def _candidate_pairs_for_split(dataset, args):
    config = _candidate_config(args)
    out = {}
    for image_id in dataset.images(args.split):
        out[image_id] = build_image_pairs(
            dataset.detections_for(image_id),
            config,
            filter_detections=not args.no_filter,
        )
    return out


def _cmd_fit_gmm(args):
    dataset = vio.load_dataset(args.data)
    pairs_by_image = _candidate_pairs_for_split(dataset, args)
    annotated = None
    if args.annotated_only:
        annotated = {}
        for ann in _weak_annotations(dataset, args.split):
            annotated.setdefault(ann.image_id, set()).add(
                (ann.subject_category, ann.object_category)
            )
    samples = []
    for image_id in dataset.images(args.split):
        wanted = annotated.get(image_id, set()) if annotated is not None else None
        for pair in pairs_by_image[image_id]:
            if wanted is not None and pair.categories not in wanted:
                continue
            samples.append(spatial_vector(pair.subject.box, pair.object.box))
    if not samples:
        raise DataError("no candidate pairs to fit the mixture on")
    config = GmmConfig(max_iters=args.max_iters, tol=args.tol, seed=args.seed)
    model = fit_gmm(np.stack(samples), args.k, config)
    vio.save_model(args.out, model)
    print(
        f"fit k={args.k} mixture on {len(samples)} spatial vectors "
        f"({len(model.log_likelihoods)} EM iterations)"
    )
    return 0


def _cmd_fit_pca(args):
    dataset = vio.load_dataset(args.data)
    rows = []
    for image_id in dataset.images(args.split):
        for det in dataset.detections_for(image_id):
            vec = np.asarray(
                dataset.features.matrix[det.feature_ref], dtype=np.float64
            )
            norm = np.linalg.norm(vec)
            if norm == 0:
                raise DataError(
                    f"zero appearance feature for detection "
                    f"{det.detection_id!r}"
                )
            rows.append(vec / norm)
    if not rows:
        raise DataError(f"split {args.split!r} has no detections")
    model = pca_fit(np.stack(rows), args.p)
    vio.save_model(args.out, model)
    print(f"fit {args.p}-d PCA on {len(rows)} appearance vectors")
    return 0


def _cmd_featurize(args):
    dataset = vio.load_dataset(args.data)
    gmm = vio.load_model(args.gmm, expected_kind="gmm")
    pca = vio.load_model(args.pca, expected_kind="pca")
    pairs_by_image = _candidate_pairs_for_split(dataset, args)
    x_by_image = {}
    total = 0
    for image_id, pairs in pairs_by_image.items():
        boxes = [(p.subject.box, p.object.box) for p in pairs]
        feats = [
            (
                dataset.features.matrix[p.subject.feature_ref],
                dataset.features.matrix[p.object.feature_ref],
            )
            for p in pairs
        ]
        x_by_image[image_id] = descriptor_matrix(gmm, pca, boxes, feats)
        total += len(pairs)
    vio.save_pair_set(args.out, pairs_by_image, x_by_image)
    print(f"featurized {total} pairs over {len(pairs_by_image)} images")
    return 0


def _load_featurizers(args):
    gmm = (
        vio.load_model(args.gmm, expected_kind="gmm")
        if args.gmm is not None
        else None
    )
    pca = (
        vio.load_model(args.pca, expected_kind="pca")
        if args.pca is not None
        else None
    )
    return gmm, pca


def _full_training_matrices(
    dataset, pair_map, split, iou_threshold, negative_rate=0.0, seed=0
):
    """Matched one-hot rows plus optionally sampled no-relation rows."""
    vocabulary = dataset.vocabulary
    anns_by_image = dataset.annotations_by_image(split)
    xs = []
    zs = []
    unmatched = []
    matched = skipped = 0
    for image_id in sorted(pair_map):
        pairs, x = pair_map[image_id]
        anns = [a for a in anns_by_image.get(image_id, []) if a.has_boxes]
        skipped += sum(
            1 for a in anns_by_image.get(image_id, []) if not a.has_boxes
        )
        result = match_full_annotations(
            anns,
            [(p.subject.box, p.object.box) for p in pairs],
            [p.categories for p in pairs],
            vocabulary,
            iou_threshold=iou_threshold,
        )
        x_rows, z = result.training_set(x)
        xs.append(x_rows)
        zs.append(z)
        for row, cols in enumerate(result.assigned):
            if not cols:
                unmatched.append(x[row])
        matched += result.matched
        skipped += result.skipped
    x_out = np.vstack(xs) if xs else np.zeros((0, 1))
    z_out = np.vstack(zs) if zs else np.zeros((0, 1))
    if negative_rate > 0.0 and unmatched:
        if not vocabulary.has_no_relation:
            raise DataError(
                "negative sampling needs a vocabulary with the "
                "no-relation class"
            )
        rng = np.random.default_rng(seed)
        count = int(round(negative_rate * len(unmatched)))
        if count:
            picks = np.sort(
                rng.choice(len(unmatched), size=count, replace=False)
            )
            neg_x = np.stack([unmatched[i] for i in picks])
            neg_z = np.zeros((count, z_out.shape[1]))
            neg_z[:, vocabulary.no_relation_index] = 1.0
            x_out = np.vstack([x_out, neg_x])
            z_out = np.vstack([z_out, neg_z])
    return x_out, z_out, matched, skipped


def _cmd_train_full(args):
    dataset = vio.load_dataset(args.data)
    pair_map = _split_pairs(dataset, args)
    gmm, pca = _load_featurizers(args)
    x, z, matched, skipped = _full_training_matrices(
        dataset, pair_map, args.split, args.iou,
        negative_rate=args.negative_rate, seed=args.seed,
    )
    if x.shape[0] == 0:
        raise DataError("no training rows after annotation matching")
    lams = [args.lam]
    if args.lam_grid is not None:
        lams = [float(v) for v in str(args.lam_grid).split(",") if v]
        if not lams:
            raise DataError("--lam-grid is empty")
        if args.val_pairs is None:
            raise DataError("--lam-grid needs --val-pairs to choose on")
    best = None
    best_recall = -1.0
    for lam in lams:
        model = train_ridge(
            x, z, lam, vocabulary=dataset.vocabulary, gmm=gmm, pca=pca
        )
        if len(lams) == 1:
            best = model
            break
        val_map = vio.load_pair_set(args.val_pairs, dataset)
        scores = {
            image_id: image_pair_scores(
                image_id, pairs, model, x=vx
            )
            for image_id, (pairs, vx) in val_map.items()
        }
        preds = {
            image_id: detection_predictions(s, ScoreWeights())
            for image_id, s in scores.items()
        }
        report = recall_at_x(
            preds,
            dataset.annotations_by_image(args.val_split),
            EvalConfig(x=50, iou_threshold=0.5, mode="relationship"),
        )
        if report.value > best_recall:
            best_recall = report.value
            best = model
    vio.save_model(args.out, best)
    print(
        f"trained on {x.shape[0]} rows "
        f"({matched} annotations matched, {skipped} skipped), "
        f"lam={best.lam:g}"
    )
    return 0


def _bags_for(dataset, pair_map, split):
    pairs, images, categories, x = _concat_pairs(pair_map)
    bags, skipped = build_bags(
        _weak_annotations(dataset, split), images, categories
    )
    return pairs, x, bags, skipped


def _cmd_train_weak(args):
    dataset = vio.load_dataset(args.data)
    pair_map = _split_pairs(dataset, args)
    gmm, pca = _load_featurizers(args)
    pairs, x, bags, skipped = _bags_for(dataset, pair_map, args.split)
    if not bags:
        raise DataError("no usable bags (all annotations skipped)")
    vocabulary = dataset.vocabulary
    if args.negative_rate > 0 and not vocabulary.has_no_relation:
        raise DataError(
            "negative sampling needs a vocabulary with the no-relation class"
        )
    config = FwConfig(
        lam=args.lam,
        max_iters=args.max_iters,
        gap_tol=args.gap_tol,
        negative_sampling_rate=args.negative_rate,
        seed=args.seed,
        block_coordinate=args.block_coordinate,
    )
    result = fw_train(
        x,
        bags,
        vocabulary.num_predicate_columns,
        config,
        no_relation_index=vocabulary.no_relation_index,
        row_scores=np.asarray([p.score_product for p in pairs]),
        vocabulary=vocabulary,
        gmm=gmm,
        pca=pca,
    )
    vio.save_model(args.out, result.model)
    if args.save_assignment is not None:
        pair_ids = [
            f"{p.image_id}#{p.subject.detection_id}#{p.object.detection_id}"
            for p in pairs
        ]
        vio.FeatureStore(pair_ids, result.assignment.z).save(
            args.save_assignment
        )
    print(
        f"trained on {len(bags)} bags ({skipped} annotations skipped); "
        f"{result.iterations} iterations, "
        f"objective {result.objective_trace[-1]:.6f}, "
        f"converged={result.converged}"
    )
    return 0


def _cmd_train_noisy(args):
    dataset = vio.load_dataset(args.data)
    pair_map = _split_pairs(dataset, args)
    gmm, pca = _load_featurizers(args)
    pairs, x, bags, skipped = _bags_for(dataset, pair_map, args.split)
    if not bags:
        raise DataError("no usable bags (all annotations skipped)")
    vocabulary = dataset.vocabulary
    negative_rows = None
    if args.negative_rate > 0:
        if not vocabulary.has_no_relation:
            raise DataError(
                "negative sampling needs a vocabulary with the "
                "no-relation class"
            )
        from .weak import sample_negatives

        negative_rows = sample_negatives(
            x.shape[0], bags, args.negative_rate, args.seed
        )
    model = train_noisy(
        x,
        bags,
        vocabulary.num_predicate_columns,
        args.lam,
        seed=args.seed,
        negative_rows=negative_rows,
        no_relation_index=vocabulary.no_relation_index,
        vocabulary=vocabulary,
        gmm=gmm,
        pca=pca,
    )
    vio.save_model(args.out, model)
    print(f"trained noisy baseline on {len(bags)} bags ({skipped} skipped)")
    return 0


def _scores_by_image(dataset, pair_map, model, args):
    lang = _language_table(args, dataset.vocabulary)
    return {
        image_id: image_pair_scores(
            image_id,
            pairs,
            model,
            x=x,
            lang=lang,
            log_scores=getattr(args, "log_scores", False),
        )
        for image_id, (pairs, x) in pair_map.items()
    }


def _cmd_tune_weights(args):
    dataset = vio.load_dataset(args.data)
    model = _load_relation_model(args.model)
    pair_map = _split_pairs(dataset, args)
    scores = _scores_by_image(dataset, pair_map, model, args)
    gt = dataset.annotations_by_image(args.split)
    for anns in gt.values():
        for ann in anns:
            if not ann.has_boxes:
                raise DataError("tuning needs box-level validation labels")
    grid = DEFAULT_ALPHA_GRID
    if args.grid is not None:
        grid = tuple(float(v) for v in str(args.grid).split(",") if v)
        if not grid:
            raise DataError("--grid is empty")
    result = tune_weights(
        scores,
        gt,
        grid_sub=grid,
        grid_obj=grid,
        grid_lang=grid,
        x=args.x,
        iou_threshold=args.iou,
        preds_per_pair=args.k,
    )
    vio.save_model(args.out, result.weights)
    w = result.weights
    print(
        f"best weights alpha_sub={w.alpha_sub:g} alpha_obj={w.alpha_obj:g} "
        f"alpha_lang={w.alpha_lang:g} (recall@{args.x} {result.recall:.4f})"
    )
    return 0


def _predictions_to_jsonl(path, predictions_by_image, vocabulary):
    with open(path, "w", encoding="utf-8") as fh:
        for image_id in sorted(predictions_by_image):
            for pred in predictions_by_image[image_id]:
                fh.write(
                    vio.canonical_json(
                        {
                            "image_id": pred.image_id,
                            "subject": vocabulary.object_names[
                                pred.subject_category
                            ],
                            "predicate": vocabulary.predicate_names[
                                pred.predicate
                            ],
                            "object": vocabulary.object_names[
                                pred.object_category
                            ],
                            "subject_box": [
                                float(c) for c in pred.subject_box.corners
                            ],
                            "object_box": [
                                float(c) for c in pred.object_box.corners
                            ],
                            "score": pred.score,
                        }
                    )
                    + "\n"
                )


def _predictions_from_jsonl(path, vocabulary):
    from .evaluation import PredictedTriplet

    out = {}
    for line_no, rec in vio._read_jsonl(Path(path)):
        where = f"{path}:{line_no}"
        try:
            pred = PredictedTriplet(
                image_id=str(rec["image_id"]),
                subject_category=vocabulary.object_index(rec["subject"]),
                predicate=vocabulary.predicate_index(rec["predicate"]),
                object_category=vocabulary.object_index(rec["object"]),
                subject_box=vio._box_from_corners(rec["subject_box"], where),
                object_box=vio._box_from_corners(rec["object_box"], where),
                score=float(rec["score"]),
            )
        except KeyError as exc:
            raise DataError(f"{where}: {exc}") from exc
        out.setdefault(pred.image_id, []).append(pred)
    return out


def _cmd_score(args):
    dataset = vio.load_dataset(args.data)
    model = _load_relation_model(args.model)
    weights = _score_weights(args)
    pair_map = vio.load_pair_set(args.pairs, dataset)
    scores = _scores_by_image(dataset, pair_map, model, args)
    predictions = {
        image_id: detection_predictions(
            s,
            weights,
            preds_per_pair=args.k,
            suppress_no_relation=args.suppress_no_relation,
        )
        for image_id, s in scores.items()
    }
    _predictions_to_jsonl(args.out, predictions, dataset.vocabulary)
    total = sum(len(v) for v in predictions.values())
    print(f"wrote {total} predictions for {len(predictions)} images")
    return 0


def _cmd_eval_recall(args):
    dataset = vio.load_dataset(args.data)
    if args.predictions is not None:
        predictions = _predictions_from_jsonl(
            args.predictions, dataset.vocabulary
        )
    else:
        if args.pairs is None or args.model is None:
            raise DataError(
                "eval-recall needs --predictions or --pairs with --model"
            )
        model = _load_relation_model(args.model)
        weights = _score_weights(args)
        pair_map = _split_pairs(dataset, args)
        scores = _scores_by_image(dataset, pair_map, model, args)
        predictions = {
            image_id: detection_predictions(
                s, weights, preds_per_pair=args.k
            )
            for image_id, s in scores.items()
        }
    config = EvalConfig(
        x=args.x,
        iou_threshold=args.iou,
        mode=args.mode,
        preds_per_pair=args.k,
    )
    gt = dataset.annotations_by_image(args.split)
    report = recall_at_x(predictions, gt, config)
    _write_report(args.out, report)
    return 0


def _cmd_eval_retrieval(args):
    dataset = vio.load_dataset(args.data)
    model = _load_relation_model(args.model)
    weights = _score_weights(args)
    gt = dataset.annotations.get(args.split, [])
    if not gt:
        raise DataError(f"split {args.split!r} carries no annotations")
    for ann in gt:
        if not ann.has_boxes:
            raise DataError("retrieval needs box-level annotations")
    queries = sorted(
        {
            (ann.subject_category, ann.predicate, ann.object_category)
            for ann in gt
        }
    )
    from .evaluation import RankedCandidate, RetrievalQuery

    if args.with_gt:
        if model.gmm is None or model.pca is None:
            raise DataError(
                "--with-gt needs a model with embedded featurizers"
            )
        det_by_box = {}
        for image_id in dataset.images(args.split):
            for det in dataset.detections_for(image_id):
                det_by_box[(image_id, det.box)] = det
        localization = "gt"
        rankings = {}
        for s, r, o in queries:
            query = RetrievalQuery(s, r, o)
            entries = []
            for ann in gt:
                try:
                    sdet = det_by_box[(ann.image_id, ann.subject_box)]
                    odet = det_by_box[(ann.image_id, ann.object_box)]
                except KeyError:
                    raise DataError(
                        f"no detection matches a GT box in {ann.image_id!r}"
                    ) from None
                x = descriptor_matrix(
                    model.gmm,
                    model.pca,
                    [(ann.subject_box, ann.object_box)],
                    [
                        (
                            dataset.features.matrix[sdet.feature_ref],
                            dataset.features.matrix[odet.feature_ref],
                        )
                    ],
                )
                score = float(x[0] @ model.weights[:, r])
                entries.append(
                    RankedCandidate(
                        image_id=ann.image_id,
                        subject_box=ann.subject_box,
                        object_box=ann.object_box,
                        score=score,
                        labels=(
                            ann.subject_category,
                            ann.predicate,
                            ann.object_category,
                        ),
                    )
                )
            rankings[query] = entries
    else:
        if args.pairs is None:
            raise DataError("eval-retrieval needs --pairs unless --with-gt")
        localization = args.localization
        if localization == "gt":
            raise DataError(
                "localization 'gt' only makes sense with --with-gt"
            )
        pair_map = _split_pairs(dataset, args)
        args.log_scores = False
        scores = _scores_by_image(dataset, pair_map, model, args)
        rankings = retrieval_rankings(
            scores,
            queries,
            weights=weights,
            filter_no_relation=args.filter_no_relation,
        )
    positives = {}
    for ann in gt:
        key = RetrievalQuery(
            ann.subject_category, ann.predicate, ann.object_category
        )
        positives.setdefault(key, []).append(ann)
    config = EvalConfig(
        iou_threshold=args.iou, localization=localization
    )
    report = retrieval_map(rankings, positives, config)
    _write_report(args.out, report)
    return 0


_HANDLERS = {
    "synth": _cmd_synth,
    "fit-gmm": _cmd_fit_gmm,
    "fit-pca": _cmd_fit_pca,
    "featurize": _cmd_featurize,
    "train-full": _cmd_train_full,
    "train-weak": _cmd_train_weak,
    "train-noisy": _cmd_train_noisy,
    "tune-weights": _cmd_tune_weights,
    "score": _cmd_score,
    "eval-recall": _cmd_eval_recall,
    "eval-retrieval": _cmd_eval_retrieval,
}


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, commands = build_parser()
    try:
        _apply_config(parser, commands, argv)
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help()
            return 1
        limiter = None
        if args.threads is not None:
            import threadpoolctl

            limiter = threadpoolctl.threadpool_limits(args.threads)
        try:
            return _HANDLERS[args.command](args)
        finally:
            if limiter is not None:
                limiter.restore_original_limits()
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
