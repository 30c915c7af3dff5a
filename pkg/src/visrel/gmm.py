"""Diagonal-covariance Gaussian mixtures fit by EM.

The mixture discretizes the 6-d spatial configuration space: a fitted
model turns each configuration vector into a k-vector of posterior
component probabilities (the "spatial" block of the pair descriptor).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from .errors import InsufficientDataError

LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class GmmConfig:
    max_iters: int = 200
    tol: float = 1e-6
    floor: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.floor <= 0:
            raise ValueError("covariance floor must be > 0")


@dataclass(frozen=True)
class GmmModel:
    """Fitted mixture: k means, diagonal variances and mixing weights."""

    means: np.ndarray       # (k, dim)
    variances: np.ndarray   # (k, dim), every entry >= floor
    weights: np.ndarray     # (k,), simplex
    seed: int = 0
    log_likelihoods: tuple[float, ...] = field(default=(), compare=False)
    n_reinits: int = field(default=0, compare=False)

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        variances = np.asarray(self.variances, dtype=np.float64)
        weights = np.asarray(self.weights, dtype=np.float64)
        if means.ndim != 2 or variances.shape != means.shape:
            raise ValueError("means and variances must both be (k, dim)")
        if weights.shape != (means.shape[0],):
            raise ValueError("weights must be (k,)")
        if not np.all(np.isfinite(means)):
            raise ValueError("means must be finite")
        if np.any(variances <= 0):
            raise ValueError("variances must be positive")
        if np.any(weights < 0) or abs(weights.sum() - 1.0) > 1e-9:
            raise ValueError("weights must be a probability simplex vector")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "variances", variances)
        object.__setattr__(self, "weights", weights)

    @property
    def k(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]


def _component_log_densities(x, means, variances):
    """(M, k) matrix of log N(x_i; mean_j, diag(var_j))."""
    # (x - mu)^2 / var summed over dims, fully vectorized over (M, k).
    diff = x[:, None, :] - means[None, :, :]
    maha = np.sum(diff * diff / variances[None, :, :], axis=2)
    log_det = np.sum(np.log(variances), axis=1)
    return -0.5 * (means.shape[1] * LOG_2PI + log_det[None, :] + maha)


def _log_joint(x, model_or_parts):
    means, variances, weights = model_or_parts
    return _component_log_densities(x, means, variances) + np.log(weights)[None, :]


def mean_log_likelihood(model: GmmModel, samples: np.ndarray) -> float:
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    lj = _log_joint(samples, (model.means, model.variances, model.weights))
    return float(np.mean(logsumexp(lj, axis=1)))


def responsibilities(model: GmmModel, x: np.ndarray) -> np.ndarray:
    """Posterior p(component | x); rows sum to 1.

    Accepts a single 6-vector or an (M, dim) batch and returns the
    matching shape.  Computed in log space, so extreme inputs renormalize
    instead of under/overflowing.
    """
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    lj = _log_joint(np.atleast_2d(x), (model.means, model.variances, model.weights))
    out = np.exp(lj - logsumexp(lj, axis=1, keepdims=True))
    return out[0] if single else out


def _kmeans_pp_centers(samples, k, rng):
    """Seeded k-means++ center selection (seeding only, no Lloyd passes)."""
    m = samples.shape[0]
    centers = np.empty((k, samples.shape[1]))
    first = int(rng.integers(m))
    centers[0] = samples[first]
    d2 = np.sum((samples - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            # all remaining mass at already-chosen points; fall back to uniform
            idx = int(rng.integers(m))
        else:
            idx = int(rng.choice(m, p=d2 / total))
        centers[j] = samples[idx]
        d2 = np.minimum(d2, np.sum((samples - centers[j]) ** 2, axis=1))
    return centers


def fit_gmm(samples: np.ndarray, k: int, config: GmmConfig | None = None) -> GmmModel:
    """Fit a k-component diagonal GMM with EM.

    Initialization is k-means++ seeding from ``config.seed``; variances
    are floored at ``config.floor`` every M-step, which keeps the
    constrained M-step an exact maximizer and so preserves the EM
    monotonicity guarantee.  A component whose responsibility mass
    collapses is re-seeded at the sample with the lowest mixture density
    (counted in ``n_reinits``; the likelihood trace may dip across such a
    restart).

    Refitting with the same samples, k and config is bit-reproducible.
    """
    config = config or GmmConfig()
    samples = np.asarray(samples, dtype=np.float64)
    if samples.ndim != 2:
        raise ValueError("samples must be a 2-d array")
    if not np.all(np.isfinite(samples)):
        raise ValueError("samples must be finite")
    m, dim = samples.shape
    if m < k:
        raise InsufficientDataError(f"need at least k={k} samples, got {m}")

    rng = np.random.default_rng(config.seed)
    means = _kmeans_pp_centers(samples, k, rng)
    global_var = np.maximum(samples.var(axis=0), config.floor)
    variances = np.tile(global_var, (k, 1))
    weights = np.full(k, 1.0 / k)

    lls = []
    n_reinits = 0
    prev_ll = -np.inf
    for _ in range(config.max_iters):
        # E-step
        lj = _log_joint(samples, (means, variances, weights))
        norm = logsumexp(lj, axis=1, keepdims=True)
        resp = np.exp(lj - norm)
        ll = float(np.mean(norm))
        lls.append(ll)

        if np.isfinite(prev_ll) and abs(ll - prev_ll) < config.tol * abs(prev_ll):
            break
        prev_ll = ll

        # M-step (variances floored: constrained argmax of Q)
        nk = resp.sum(axis=0)
        empty = nk < 1e-8
        weights = nk / m
        safe_nk = np.maximum(nk, 1e-12)
        means = (resp.T @ samples) / safe_nk[:, None]
        second = (resp.T @ (samples * samples)) / safe_nk[:, None]
        variances = np.maximum(second - means * means, config.floor)

        if np.any(empty):
            # re-seed collapsed components at the least-explained samples
            density = logsumexp(
                _log_joint(samples, (means, variances, weights + 1e-300)), axis=1
            )
            worst = np.argsort(density)
            for rank, j in enumerate(np.flatnonzero(empty)):
                n_reinits += 1
                means[j] = samples[worst[rank % m]]
                variances[j] = global_var
                weights[j] = 1.0 / m
            weights = weights / weights.sum()

    weights = weights / weights.sum()
    return GmmModel(
        means=means,
        variances=variances,
        weights=weights,
        seed=config.seed,
        log_likelihoods=tuple(lls),
        n_reinits=n_reinits,
    )
