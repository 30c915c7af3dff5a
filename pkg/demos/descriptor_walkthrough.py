"""From two detected boxes to a relation descriptor, block by block.

Run with: python3 demos/descriptor_walkthrough.py
"""

import numpy as np

from visrel import (
    BoundingBox,
    GmmConfig,
    fit_gmm,
    make_pair_descriptor,
    pca_fit,
    responsibilities,
    spatial_vector,
)
from visrel.features import l2_normalize

rng = np.random.default_rng(0)

print("1. The six spatial terms for two touching unit-aspect squares")
subject = BoundingBox(x=1.0, y=1.0, w=2.0, h=2.0)
obj = BoundingBox(x=3.0, y=1.0, w=2.0, h=2.0)
terms = spatial_vector(subject, obj)
for name, value in zip(
    ("dx/scale", "dy/scale", "size ratio", "iou",
     "subject aspect", "object aspect"), terms,
):
    print(f"   {name:>14}: {value:.3f}")
print("   scale-invariant: doubling every coordinate changes nothing ->",
      np.array_equal(terms, spatial_vector(
          BoundingBox(2.0, 2.0, 4.0, 4.0), BoundingBox(6.0, 2.0, 4.0, 4.0))))

print("\n2. A spatial vocabulary: mixture responsibilities as soft bins")


def random_box():
    x, y = rng.uniform(10, 90, size=2)
    w, h = rng.uniform(4, 20, size=2)
    return BoundingBox(x=float(x), y=float(y), w=float(w), h=float(h))


samples = np.stack([
    spatial_vector(random_box(), random_box()) for _ in range(600)
])
gmm = fit_gmm(samples, k=8, config=GmmConfig(seed=0))
resp = responsibilities(gmm, terms)
print(f"   fitted k={gmm.k} components in {len(gmm.log_likelihoods)} EM steps")
print("   responsibilities sum to", float(resp.sum()),
      "- the descriptor's spatial block")
print("   strongest component:", int(np.argmax(resp)),
      f"with mass {float(resp.max()):.3f}")

print("\n3. Appearance: L2-normalize, project with PCA, renormalize")
# four category prototypes plus noise: the spectrum should show 3-4
# strong axes, the rest noise floor
prototypes = rng.normal(size=(4, 64))
appearances = l2_normalize(
    prototypes[rng.integers(4, size=400)] + 0.3 * rng.normal(size=(400, 64))
)
pca = pca_fit(appearances, p=16)
fractions = pca.explained_variance / pca.explained_variance.sum()
print("   share of captured variance, first 6 axes:",
      np.round(fractions[:6], 2))

print("\n4. The full pair descriptor = spatial ++ subject ++ object blocks")
descriptor = make_pair_descriptor(
    gmm, pca, subject, obj, rng.normal(size=64), rng.normal(size=64)
)
k, p = gmm.k, pca.components.shape[0]
print(f"   length {descriptor.full.shape[0]} = {k} spatial + 2 x {p} appearance")
print("   spatial block L1 norm:",
      float(np.abs(descriptor.full[:k]).sum()))
print("   appearance block L2 norm:",
      float(np.linalg.norm(descriptor.full[k:])))
print("   (defaults k=400, p=300 give the 1000-d production descriptor)")
