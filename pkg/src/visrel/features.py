"""Pair descriptors: GMM spatial responsibilities + PCA-reduced appearance.

Assembly order is fixed: L2-normalize each raw appearance vector, project
with PCA, concatenate subject and object projections, L2-normalize the
concatenation, then prepend the spatial responsibility block.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import BoundingBox, Detection, spatial_vector
from .errors import InsufficientDataError
from .gmm import GmmModel, responsibilities


def l2_normalize(v: np.ndarray) -> np.ndarray:
    """Scale to unit L2 norm; rejects zero vectors."""
    v = np.asarray(v, dtype=np.float64)
    norm = np.linalg.norm(v)
    if norm == 0.0:
        raise ValueError("cannot L2-normalize a zero vector")
    return v / norm


@dataclass(frozen=True)
class PcaModel:
    """Mean and orthonormal principal axes (rows of ``components``)."""

    mean: np.ndarray               # (D,)
    components: np.ndarray         # (p, D)
    explained_variance: np.ndarray  # (p,), non-increasing

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        comps = np.asarray(self.components, dtype=np.float64)
        ev = np.asarray(self.explained_variance, dtype=np.float64)
        if comps.ndim != 2 or mean.shape != (comps.shape[1],):
            raise ValueError("components must be (p, D) with mean (D,)")
        if comps.shape[0] > comps.shape[1]:
            raise ValueError("output dim p must not exceed input dim D")
        gram = comps @ comps.T
        if not np.allclose(gram, np.eye(comps.shape[0]), atol=1e-6):
            raise ValueError("component rows must be orthonormal")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "components", comps)
        object.__setattr__(self, "explained_variance", ev)

    @property
    def input_dim(self) -> int:
        return self.components.shape[1]

    @property
    def output_dim(self) -> int:
        return self.components.shape[0]


def pca_fit(features: np.ndarray, p: int) -> PcaModel:
    """Principal axes of mean-centered features, by decreasing variance.

    The inputs are expected to be the already-L2-normalized appearance
    vectors.  Axis signs are fixed deterministically (largest-magnitude
    coefficient positive) so refits are reproducible.
    """
    features = np.asarray(features, dtype=np.float64)
    if features.ndim != 2:
        raise ValueError("features must be a 2-d array")
    m, d = features.shape
    if m < p:
        raise InsufficientDataError(f"need at least p={p} samples, got {m}")
    if p < 1 or p > d:
        raise ValueError(f"output dim must be in [1, {d}], got {p}")
    mean = features.mean(axis=0)
    centered = features - mean
    _, svals, vt = np.linalg.svd(centered, full_matrices=False)
    comps = vt[:p]
    # sign convention: largest-|coefficient| entry of each axis positive
    flips = np.sign(comps[np.arange(p), np.argmax(np.abs(comps), axis=1)])
    flips[flips == 0] = 1.0
    comps = comps * flips[:, None]
    explained = (svals[:p] ** 2) / m
    return PcaModel(mean=mean, components=comps, explained_variance=explained)


def pca_project(model: PcaModel, v: np.ndarray) -> np.ndarray:
    """components @ (v - mean); accepts a single vector or an (M, D) batch."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != model.input_dim:
        raise ValueError(
            f"expected last dimension {model.input_dim}, got {v.shape[-1]}"
        )
    return (v - model.mean) @ model.components.T


@dataclass(frozen=True)
class PairDescriptor:
    """Feature row of one ordered pair: spatial block ++ appearance block."""

    spatial: np.ndarray     # (k,), sums to 1
    appearance: np.ndarray  # (2p,), unit L2 norm

    def __post_init__(self):
        spatial = np.asarray(self.spatial, dtype=np.float64)
        appearance = np.asarray(self.appearance, dtype=np.float64)
        if abs(spatial.sum() - 1.0) > 1e-6:
            raise ValueError("spatial block must sum to 1")
        if abs(np.linalg.norm(appearance) - 1.0) > 1e-6:
            raise ValueError("appearance block must have unit L2 norm")
        object.__setattr__(self, "spatial", spatial)
        object.__setattr__(self, "appearance", appearance)

    @property
    def full(self) -> np.ndarray:
        return np.concatenate([self.spatial, self.appearance])

    def __len__(self) -> int:
        return self.spatial.shape[0] + self.appearance.shape[0]


def appearance_block(
    pca: PcaModel, subject_feature: np.ndarray, object_feature: np.ndarray
) -> np.ndarray:
    """L2(concat(PCA(L2(f_s)), PCA(L2(f_o)))) — the 2p appearance block."""
    proj_s = pca_project(pca, l2_normalize(subject_feature))
    proj_o = pca_project(pca, l2_normalize(object_feature))
    return l2_normalize(np.concatenate([proj_s, proj_o]))


def make_pair_descriptor(
    gmm: GmmModel,
    pca: PcaModel,
    subject: Detection | BoundingBox,
    obj: Detection | BoundingBox,
    subject_feature: np.ndarray,
    object_feature: np.ndarray,
) -> PairDescriptor:
    """Assemble the full descriptor for one ordered (subject, object) pair.

    With the default configuration (k=400 spatial components, 300-d PCA)
    the concatenated descriptor has 400 + 2*300 = 1000 dimensions.
    """
    sbox = subject.box if isinstance(subject, Detection) else subject
    obox = obj.box if isinstance(obj, Detection) else obj
    spatial = responsibilities(gmm, spatial_vector(sbox, obox))
    appearance = appearance_block(pca, subject_feature, object_feature)
    return PairDescriptor(spatial=spatial, appearance=appearance)


def descriptor_matrix(
    gmm: GmmModel,
    pca: PcaModel,
    boxes: list[tuple[BoundingBox, BoundingBox]],
    features: list[tuple[np.ndarray, np.ndarray]],
) -> np.ndarray:
    """Vectorized descriptor assembly for many pairs; rows align with input."""
    if len(boxes) != len(features):
        raise ValueError("boxes and features must have the same length")
    if not boxes:
        return np.zeros((0, gmm.k + 2 * pca.output_dim))
    spatial_rows = np.stack([spatial_vector(s, o) for s, o in boxes])
    spatial = responsibilities(gmm, spatial_rows)

    def _norm_rows(mat):
        norms = np.linalg.norm(mat, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValueError("cannot L2-normalize a zero vector")
        return mat / norms

    f_s = _norm_rows(np.stack([np.asarray(f, dtype=np.float64) for f, _ in features]))
    f_o = _norm_rows(np.stack([np.asarray(f, dtype=np.float64) for _, f in features]))
    appearance = _norm_rows(
        np.hstack([pca_project(pca, f_s), pca_project(pca, f_o)])
    )
    return np.hstack([spatial, appearance])
