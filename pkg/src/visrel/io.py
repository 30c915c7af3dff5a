"""Dataset, feature and model persistence.

Metadata (detections, annotations, vocabulary, manifest) is line-oriented
JSON so it stays human-inspectable; bulk floats live in a little-endian
binary feature store.  Model files are a versioned container: canonical
JSON header plus raw float64 payloads, so save -> load -> save is
byte-identical and scores survive round-trips bit-exactly.

Feature store layout (all little-endian):
    magic b"RELF" | u32 version | u64 M | u64 D
    M*D float32 row-major payload
    UTF-8 JSON array of M unique row ids

Model container layout:
    magic b"VRLM" | u32 version | u64 header_len
    canonical JSON header (kind, config, payload table, vocab hash)
    concatenated float64 payloads
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import BoundingBox, Detection, TripletAnnotation, Vocabulary
from .errors import DataError
from .features import PcaModel
from .gmm import GmmModel
from .scoring import ScoreWeights
from .supervised import RelationModel

FEATURE_MAGIC = b"RELF"
MODEL_MAGIC = b"VRLM"
FORMAT_VERSION = 1


def canonical_json(obj) -> str:
    """Deterministic JSON: sorted keys, compact separators, no NaN."""
    return json.dumps(
        obj, sort_keys=True, separators=(",", ":"), ensure_ascii=True,
        allow_nan=False,
    )


def _vocab_dict(vocabulary: Vocabulary) -> dict:
    return {
        "objects": list(vocabulary.object_names),
        "predicates": list(vocabulary.predicate_names),
        "no_relation": vocabulary.has_no_relation,
    }


def _vocab_from_dict(data: dict) -> Vocabulary:
    return Vocabulary(
        object_names=tuple(data["objects"]),
        predicate_names=tuple(data["predicates"]),
        has_no_relation=bool(data.get("no_relation", False)),
    )


def vocab_sha256(vocabulary: Vocabulary) -> str:
    return hashlib.sha256(
        canonical_json(_vocab_dict(vocabulary)).encode("utf-8")
    ).hexdigest()


class FeatureStore:
    """Dense float32 matrix with a unique string id per row."""

    def __init__(self, ids, matrix: np.ndarray):
        ids = tuple(str(i) for i in ids)
        matrix = np.ascontiguousarray(matrix, dtype=np.float32)
        if matrix.ndim != 2:
            raise ValueError("feature matrix must be 2-d")
        if len(ids) != matrix.shape[0]:
            raise ValueError("one id per row required")
        if len(set(ids)) != len(ids):
            raise ValueError("row ids must be unique")
        self.ids = ids
        self.matrix = matrix
        self._index = {i: row for row, i in enumerate(ids)}

    @property
    def num_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]

    def row_index(self, feature_id: str) -> int:
        try:
            return self._index[feature_id]
        except KeyError:
            raise DataError(f"unknown feature id {feature_id!r}") from None

    def vector(self, feature_id: str) -> np.ndarray:
        return self.matrix[self.row_index(feature_id)]

    def save(self, path) -> None:
        path = Path(path)
        m, d = self.matrix.shape
        with open(path, "wb") as fh:
            fh.write(FEATURE_MAGIC)
            fh.write(struct.pack("<IQQ", FORMAT_VERSION, m, d))
            fh.write(self.matrix.astype("<f4", copy=False).tobytes(order="C"))
            fh.write(canonical_json(list(self.ids)).encode("utf-8"))

    @classmethod
    def load(cls, path) -> "FeatureStore":
        path = Path(path)
        try:
            blob = path.read_bytes()
        except OSError as exc:
            raise DataError(f"{path}: {exc}") from exc
        header = 4 + struct.calcsize("<IQQ")
        if len(blob) < header or blob[:4] != FEATURE_MAGIC:
            raise DataError(f"{path}: not a feature store (bad magic)")
        version, m, d = struct.unpack("<IQQ", blob[4:header])
        if version != FORMAT_VERSION:
            raise DataError(
                f"{path}: unsupported feature-store version {version}"
            )
        payload_len = m * d * 4
        if len(blob) < header + payload_len:
            raise DataError(f"{path}: truncated payload")
        matrix = np.frombuffer(
            blob, dtype="<f4", count=m * d, offset=header
        ).reshape(m, d)
        try:
            ids = json.loads(blob[header + payload_len :].decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise DataError(f"{path}: corrupt id index: {exc}") from exc
        if not isinstance(ids, list) or len(ids) != m:
            raise DataError(f"{path}: id index must list exactly {m} ids")
        try:
            return cls(ids, matrix)
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc


def _box_to_corners(box: BoundingBox) -> list[float]:
    return [float(c) for c in box.corners]


def _box_from_corners(values, where: str) -> BoundingBox:
    if not isinstance(values, (list, tuple)) or len(values) != 4:
        raise DataError(f"{where}: box must be [x0, y0, x1, y1]")
    try:
        return BoundingBox.from_corners(*[float(v) for v in values])
    except (TypeError, ValueError) as exc:
        raise DataError(f"{where}: {exc}") from exc


def _read_jsonl(path: Path):
    try:
        with open(path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                line = line.strip()
                if not line:
                    continue
                try:
                    yield line_no, json.loads(line)
                except json.JSONDecodeError as exc:
                    raise DataError(f"{path}:{line_no}: {exc}") from exc
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc


def load_vocabulary(path) -> Vocabulary:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: {exc}") from exc
    for key in ("objects", "predicates"):
        if key not in data or not isinstance(data[key], list):
            raise DataError(f"{path}: missing list field {key!r}")
    try:
        return _vocab_from_dict(data)
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc


def save_vocabulary(path, vocabulary: Vocabulary) -> None:
    Path(path).write_text(
        canonical_json(_vocab_dict(vocabulary)) + "\n", encoding="utf-8"
    )


def load_detections(
    path, vocabulary: Vocabulary, features: FeatureStore | None = None
) -> dict[str, list[Detection]]:
    """Detections grouped by image, categories resolved to indices."""
    path = Path(path)
    by_image: dict[str, list[Detection]] = {}
    seen_ids = set()
    for line_no, rec in _read_jsonl(path):
        where = f"{path}:{line_no}"
        for key in ("image_id", "detection_id", "category", "score", "box"):
            if key not in rec:
                raise DataError(f"{where}: missing field {key!r}")
        det_id = str(rec["detection_id"])
        if det_id in seen_ids:
            raise DataError(f"{where}: duplicate detection_id {det_id!r}")
        seen_ids.add(det_id)
        try:
            category = vocabulary.object_index(rec["category"])
        except KeyError as exc:
            raise DataError(f"{where}: {exc}") from exc
        score = rec["score"]
        if not isinstance(score, (int, float)) or not 0.0 <= score <= 1.0:
            raise DataError(f"{where}: score must be in [0, 1]")
        feature_row = -1
        if features is not None:
            ref = rec.get("feature_ref")
            if ref is None:
                raise DataError(f"{where}: missing field 'feature_ref'")
            try:
                feature_row = features.row_index(str(ref))
            except DataError as exc:
                raise DataError(f"{where}: {exc}") from exc
        det = Detection(
            box=_box_from_corners(rec["box"], where),
            category=category,
            score=float(score),
            image_id=str(rec["image_id"]),
            feature_ref=feature_row,
            detection_id=det_id,
        )
        by_image.setdefault(det.image_id, []).append(det)
    return by_image


def save_detections(path, detections_by_image: dict, vocabulary: Vocabulary,
                    features: FeatureStore | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for image_id in sorted(detections_by_image):
            for det in detections_by_image[image_id]:
                rec = {
                    "image_id": det.image_id,
                    "detection_id": det.detection_id,
                    "category": vocabulary.object_names[det.category],
                    "score": det.score,
                    "box": _box_to_corners(det.box),
                }
                if features is not None and det.feature_ref >= 0:
                    rec["feature_ref"] = features.ids[det.feature_ref]
                fh.write(canonical_json(rec) + "\n")


def load_annotations(path, vocabulary: Vocabulary) -> list[TripletAnnotation]:
    path = Path(path)
    annotations = []
    for line_no, rec in _read_jsonl(path):
        where = f"{path}:{line_no}"
        for key in ("image_id", "subject", "predicate", "object"):
            if key not in rec:
                raise DataError(f"{where}: missing field {key!r}")
        try:
            subject = vocabulary.object_index(rec["subject"])
            predicate = vocabulary.predicate_index(rec["predicate"])
            obj = vocabulary.object_index(rec["object"])
        except KeyError as exc:
            raise DataError(f"{where}: {exc}") from exc
        has_sbox = "subject_box" in rec
        has_obox = "object_box" in rec
        if has_sbox != has_obox:
            raise DataError(
                f"{where}: subject_box and object_box must come together"
            )
        sbox = _box_from_corners(rec["subject_box"], where) if has_sbox else None
        obox = _box_from_corners(rec["object_box"], where) if has_obox else None
        annotations.append(
            TripletAnnotation(
                image_id=str(rec["image_id"]),
                subject_category=subject,
                predicate=predicate,
                object_category=obj,
                subject_box=sbox,
                object_box=obox,
            )
        )
    return annotations


def save_annotations(path, annotations, vocabulary: Vocabulary) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ann in annotations:
            rec = {
                "image_id": ann.image_id,
                "subject": vocabulary.object_names[ann.subject_category],
                "predicate": vocabulary.predicate_names[ann.predicate],
                "object": vocabulary.object_names[ann.object_category],
            }
            if ann.has_boxes:
                rec["subject_box"] = _box_to_corners(ann.subject_box)
                rec["object_box"] = _box_to_corners(ann.object_box)
            fh.write(canonical_json(rec) + "\n")


@dataclass
class Dataset:
    """Everything a manifest references, loaded and cross-validated."""

    root: Path
    vocabulary: Vocabulary
    detections: dict[str, list[Detection]]       # image_id -> detections
    annotations: dict[str, list[TripletAnnotation]]  # split -> annotations
    features: FeatureStore
    splits: dict[str, tuple[str, ...]]            # split -> image ids

    def images(self, split: str) -> tuple[str, ...]:
        if split not in self.splits:
            raise DataError(f"unknown split {split!r}")
        return self.splits[split]

    def detections_for(self, image_id: str) -> list[Detection]:
        return self.detections.get(image_id, [])

    def annotations_by_image(
        self, split: str
    ) -> dict[str, list[TripletAnnotation]]:
        out: dict[str, list[TripletAnnotation]] = {
            image_id: [] for image_id in self.images(split)
        }
        for ann in self.annotations.get(split, []):
            out.setdefault(ann.image_id, []).append(ann)
        return out


def load_dataset(manifest_path) -> Dataset:
    """Load and cross-validate a dataset from its manifest."""
    manifest_path = Path(manifest_path)
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DataError(f"{manifest_path}: {exc}") from exc
    if manifest.get("format_version") != FORMAT_VERSION:
        raise DataError(
            f"{manifest_path}: unsupported format_version "
            f"{manifest.get('format_version')!r}"
        )
    root = manifest_path.parent
    for key in ("vocabulary", "detections", "features", "annotations", "splits"):
        if key not in manifest:
            raise DataError(f"{manifest_path}: missing field {key!r}")
    vocabulary = load_vocabulary(root / manifest["vocabulary"])
    features = FeatureStore.load(root / manifest["features"])
    detections = load_detections(
        root / manifest["detections"], vocabulary, features
    )
    splits: dict[str, tuple[str, ...]] = {}
    seen_images: dict[str, str] = {}
    for split, image_ids in sorted(manifest["splits"].items()):
        ids = tuple(str(i) for i in image_ids)
        for image_id in ids:
            if image_id in seen_images:
                raise DataError(
                    f"{manifest_path}: image {image_id!r} appears in splits "
                    f"{seen_images[image_id]!r} and {split!r}"
                )
            seen_images[image_id] = split
        splits[split] = ids
    annotations: dict[str, list[TripletAnnotation]] = {}
    for split, rel_path in sorted(manifest["annotations"].items()):
        if split not in splits:
            raise DataError(
                f"{manifest_path}: annotations for unknown split {split!r}"
            )
        anns = load_annotations(root / rel_path, vocabulary)
        for ann in anns:
            if ann.image_id not in splits[split]:
                raise DataError(
                    f"{manifest_path}: annotation image {ann.image_id!r} "
                    f"not in split {split!r}"
                )
        annotations[split] = anns
    return Dataset(
        root=root,
        vocabulary=vocabulary,
        detections=detections,
        annotations=annotations,
        features=features,
        splits=splits,
    )


def save_dataset(out_dir, dataset: Dataset) -> Path:
    """Write a dataset directory and return the manifest path."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    save_vocabulary(out_dir / "vocabulary.json", dataset.vocabulary)
    dataset.features.save(out_dir / "features.bin")
    save_detections(
        out_dir / "detections.jsonl",
        dataset.detections,
        dataset.vocabulary,
        dataset.features,
    )
    annotation_paths = {}
    for split in sorted(dataset.annotations):
        rel = f"annotations_{split}.jsonl"
        save_annotations(
            out_dir / rel, dataset.annotations[split], dataset.vocabulary
        )
        annotation_paths[split] = rel
    manifest = {
        "format_version": FORMAT_VERSION,
        "vocabulary": "vocabulary.json",
        "detections": "detections.jsonl",
        "features": "features.bin",
        "annotations": annotation_paths,
        "splits": {s: list(ids) for s, ids in dataset.splits.items()},
    }
    manifest_path = out_dir / "manifest.json"
    manifest_path.write_text(canonical_json(manifest) + "\n", encoding="utf-8")
    return manifest_path


def save_pair_set(
    out_dir,
    pairs_by_image: dict[str, list],
    x_by_image: dict[str, np.ndarray],
) -> None:
    """Write candidate pairs plus their descriptor rows.

    ``pairs.jsonl`` lists the pairs (ids only; detections stay in the
    dataset); ``descriptors.bin`` is a feature store keyed by pair id,
    rows aligned with the listing order.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    ids = []
    rows = []
    with open(out_dir / "pairs.jsonl", "w", encoding="utf-8") as fh:
        for image_id in sorted(pairs_by_image):
            pairs = pairs_by_image[image_id]
            x = x_by_image[image_id]
            if len(pairs) != x.shape[0]:
                raise ValueError(f"{image_id}: descriptor rows misaligned")
            for i, pair in enumerate(pairs):
                pair_id = (
                    f"{image_id}#{pair.subject.detection_id}"
                    f"#{pair.object.detection_id}"
                )
                fh.write(
                    canonical_json(
                        {
                            "pair_id": pair_id,
                            "image_id": image_id,
                            "subject_detection_id": pair.subject.detection_id,
                            "object_detection_id": pair.object.detection_id,
                        }
                    )
                    + "\n"
                )
                ids.append(pair_id)
                rows.append(np.asarray(x[i], dtype=np.float32))
    if rows:
        store = FeatureStore(ids, np.stack(rows))
    else:
        store = FeatureStore([], np.zeros((0, 1), dtype=np.float32))
    store.save(out_dir / "descriptors.bin")


def load_pair_set(pair_dir, dataset: Dataset):
    """Read a featurize output; returns {image: (pairs, descriptor rows)}.

    Detections are resolved by id against the dataset, so the pair set
    must belong to the same manifest it was computed from.
    """
    from .candidates import PairCandidate

    pair_dir = Path(pair_dir)
    store = FeatureStore.load(pair_dir / "descriptors.bin")
    det_by_id: dict[str, Detection] = {}
    for dets in dataset.detections.values():
        for det in dets:
            det_by_id[det.detection_id] = det
    out: dict[str, tuple[list, list[int]]] = {}
    for line_no, rec in _read_jsonl(pair_dir / "pairs.jsonl"):
        where = f"{pair_dir / 'pairs.jsonl'}:{line_no}"
        for key in (
            "pair_id", "image_id", "subject_detection_id",
            "object_detection_id",
        ):
            if key not in rec:
                raise DataError(f"{where}: missing field {key!r}")
        try:
            subject = det_by_id[rec["subject_detection_id"]]
            obj = det_by_id[rec["object_detection_id"]]
        except KeyError as exc:
            raise DataError(f"{where}: unknown detection {exc}") from exc
        row = store.row_index(str(rec["pair_id"]))
        pairs, rows = out.setdefault(str(rec["image_id"]), ([], []))
        pairs.append(
            PairCandidate(
                image_id=str(rec["image_id"]), subject=subject, object=obj
            )
        )
        rows.append(row)
    return {
        image_id: (pairs, np.asarray(store.matrix[rows], dtype=np.float64))
        for image_id, (pairs, rows) in sorted(out.items())
    }


def _payload_table(arrays: dict[str, np.ndarray]):
    table = []
    chunks = []
    offset = 0
    for name in sorted(arrays):
        arr = np.ascontiguousarray(arrays[name], dtype=np.float64)
        raw = arr.astype("<f8", copy=False).tobytes(order="C")
        table.append(
            {
                "name": name,
                "dtype": "float64",
                "shape": list(arr.shape),
                "offset": offset,
            }
        )
        chunks.append(raw)
        offset += len(raw)
    return table, b"".join(chunks)


def _model_header_and_arrays(model):
    if isinstance(model, GmmModel):
        header = {
            "kind": "gmm",
            "seed": model.seed,
            "n_reinits": model.n_reinits,
        }
        arrays = {
            "means": model.means,
            "variances": model.variances,
            "weights": model.weights,
            "log_likelihoods": np.asarray(model.log_likelihoods),
        }
        return header, arrays
    if isinstance(model, PcaModel):
        header = {"kind": "pca"}
        arrays = {
            "mean": model.mean,
            "components": model.components,
            "explained_variance": model.explained_variance,
        }
        return header, arrays
    if isinstance(model, ScoreWeights):
        header = {
            "kind": "score_weights",
            "alpha_sub": model.alpha_sub,
            "alpha_obj": model.alpha_obj,
            "alpha_lang": model.alpha_lang,
        }
        return header, {}
    if isinstance(model, RelationModel):
        header = {"kind": "relation_model", "lam": model.lam}
        arrays = {"weights": model.weights}
        if model.vocabulary is not None:
            header["vocabulary"] = _vocab_dict(model.vocabulary)
            header["vocab_sha256"] = vocab_sha256(model.vocabulary)
        if model.gmm is not None:
            gmm_header, gmm_arrays = _model_header_and_arrays(model.gmm)
            header["gmm"] = {
                k: v for k, v in gmm_header.items() if k != "kind"
            }
            arrays.update({f"gmm.{k}": v for k, v in gmm_arrays.items()})
        if model.pca is not None:
            _, pca_arrays = _model_header_and_arrays(model.pca)
            arrays.update({f"pca.{k}": v for k, v in pca_arrays.items()})
        return header, arrays
    raise TypeError(f"cannot serialize {type(model).__name__}")


def save_model(path, model) -> None:
    """Write one model to a versioned container file."""
    header, arrays = _model_header_and_arrays(model)
    table, payload = _payload_table(arrays)
    header_obj = {
        "format_version": FORMAT_VERSION,
        "payloads": table,
        **header,
    }
    header_bytes = canonical_json(header_obj).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MODEL_MAGIC)
        fh.write(struct.pack("<IQ", FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(payload)


def _extract_arrays(header: dict, payload: bytes, path) -> dict:
    arrays = {}
    expected_end = 0
    for entry in header.get("payloads", []):
        shape = tuple(int(s) for s in entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        start = int(entry["offset"])
        end = start + count * 8
        expected_end = max(expected_end, end)
        if end > len(payload):
            raise DataError(f"{path}: payload for {entry['name']!r} truncated")
        arrays[entry["name"]] = np.frombuffer(
            payload, dtype="<f8", count=count, offset=start
        ).reshape(shape)
    if expected_end != len(payload):
        raise DataError(f"{path}: payload length mismatch")
    return arrays


def load_model(path, expected_kind: str | None = None):
    """Read a model container; verifies version and vocabulary hash."""
    path = Path(path)
    try:
        blob = path.read_bytes()
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from exc
    prefix = 4 + struct.calcsize("<IQ")
    if len(blob) < prefix or blob[:4] != MODEL_MAGIC:
        raise DataError(f"{path}: not a model container (bad magic)")
    version, header_len = struct.unpack("<IQ", blob[4:prefix])
    if version != FORMAT_VERSION:
        raise DataError(f"{path}: unsupported container version {version}")
    if len(blob) < prefix + header_len:
        raise DataError(f"{path}: truncated header")
    try:
        header = json.loads(blob[prefix : prefix + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise DataError(f"{path}: corrupt header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise DataError(f"{path}: header format_version mismatch")
    kind = header.get("kind")
    if expected_kind is not None and kind != expected_kind:
        raise DataError(f"{path}: expected {expected_kind!r}, found {kind!r}")
    arrays = _extract_arrays(header, blob[prefix + header_len :], path)
    try:
        if kind == "gmm":
            return GmmModel(
                means=arrays["means"],
                variances=arrays["variances"],
                weights=arrays["weights"],
                seed=int(header["seed"]),
                log_likelihoods=tuple(arrays["log_likelihoods"].tolist()),
                n_reinits=int(header["n_reinits"]),
            )
        if kind == "pca":
            return PcaModel(
                mean=arrays["mean"],
                components=arrays["components"],
                explained_variance=arrays["explained_variance"],
            )
        if kind == "score_weights":
            return ScoreWeights(
                alpha_sub=float(header["alpha_sub"]),
                alpha_obj=float(header["alpha_obj"]),
                alpha_lang=float(header["alpha_lang"]),
            )
        if kind == "relation_model":
            vocabulary = None
            if "vocabulary" in header:
                vocabulary = _vocab_from_dict(header["vocabulary"])
                if vocab_sha256(vocabulary) != header.get("vocab_sha256"):
                    raise DataError(f"{path}: vocabulary hash mismatch")
            gmm = None
            if "gmm" in header:
                gmm = GmmModel(
                    means=arrays["gmm.means"],
                    variances=arrays["gmm.variances"],
                    weights=arrays["gmm.weights"],
                    seed=int(header["gmm"]["seed"]),
                    log_likelihoods=tuple(
                        arrays["gmm.log_likelihoods"].tolist()
                    ),
                    n_reinits=int(header["gmm"]["n_reinits"]),
                )
            pca = None
            if "pca.mean" in arrays:
                pca = PcaModel(
                    mean=arrays["pca.mean"],
                    components=arrays["pca.components"],
                    explained_variance=arrays["pca.explained_variance"],
                )
            return RelationModel(
                weights=arrays["weights"],
                lam=float(header["lam"]),
                vocabulary=vocabulary,
                gmm=gmm,
                pca=pca,
            )
    except KeyError as exc:
        raise DataError(f"{path}: missing header field {exc}") from exc
    except ValueError as exc:
        raise DataError(f"{path}: {exc}") from exc
    raise DataError(f"{path}: unknown model kind {kind!r}")
