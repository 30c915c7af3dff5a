"""Weakly-supervised relation learning by discriminative clustering.

Image-level annotations only say that some pair in the image holds the
predicate.  We minimize, over assignment matrices Z constrained by those
bags, the ridge objective with W eliminated in closed form:

    f(Z) = (1/N) tr(Z^T (Z - X W(Z))),   W(Z) = (X^T X + N lam I)^{-1} X^T Z

f is a convex quadratic in Z (the implicit matrix B with f = (1/N) tr(Z^T B Z)
is positive semidefinite), so Frank-Wolfe with exact line search descends
monotonically.  The linear minimization oracle decomposes per image over
row simplices with at-least-one-row-per-bag constraints.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .core import TripletAnnotation, Vocabulary
from .features import PcaModel
from .gmm import GmmModel
from .supervised import RelationModel, RidgeFactor


@dataclass(frozen=True)
class Bag:
    """Candidate-pair rows that could realize one weak annotation."""

    rows: tuple[int, ...]
    predicate_index: int
    image_id: str

    def __post_init__(self):
        rows = tuple(int(r) for r in self.rows)
        if not rows:
            raise ValueError("bag must contain at least one row")
        if len(set(rows)) != len(rows):
            raise ValueError("bag rows must be distinct")
        if self.predicate_index < 0:
            raise ValueError("predicate index must be non-negative")
        object.__setattr__(self, "rows", rows)


@dataclass(frozen=True)
class AssignmentMatrix:
    """Relaxed latent assignment of pairs to predicate columns.

    Rows lie on the simplex; rows in ``fixed_rows`` are clamped one-hot
    at the no-relation column and never move during optimization.
    """

    z: np.ndarray  # (N, R')
    fixed_rows: frozenset[int] = frozenset()
    no_relation_index: int | None = None

    def __post_init__(self):
        z = np.asarray(self.z, dtype=np.float64)
        if z.ndim != 2:
            raise ValueError("assignment matrix must be 2-d")
        if np.any(z < -1e-9) or np.any(z > 1.0 + 1e-9):
            raise ValueError("assignment entries must lie in [0, 1]")
        sums = z.sum(axis=1)
        if np.max(np.abs(sums - 1.0)) > 1e-9:
            raise ValueError("assignment rows must sum to 1")
        fixed = frozenset(int(r) for r in self.fixed_rows)
        if fixed:
            if self.no_relation_index is None:
                raise ValueError("fixed rows require a no-relation column")
            for row in fixed:
                if z[row, self.no_relation_index] != 1.0:
                    raise ValueError(
                        f"fixed row {row} must be one-hot at no-relation"
                    )
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "fixed_rows", fixed)

    @property
    def num_rows(self) -> int:
        return self.z.shape[0]

    @property
    def num_columns(self) -> int:
        return self.z.shape[1]


def bag_violation(z: np.ndarray, bags: list[Bag]) -> float:
    """Largest shortfall of sum_{n in bag} Z[n, r] below 1; 0 if all hold."""
    worst = 0.0
    for bag in bags:
        mass = float(z[list(bag.rows), bag.predicate_index].sum())
        worst = max(worst, 1.0 - mass)
    return worst


@dataclass(frozen=True)
class FwConfig:
    """Frank-Wolfe hyperparameters (the method leaves them open)."""

    lam: float
    max_iters: int = 500
    gap_tol: float = 1e-5           # relative duality gap
    negative_sampling_rate: float = 0.0
    seed: int = 0
    block_coordinate: bool = False  # cycle per-image blocks instead
    exact_lmo_max_rows: int = 10    # exhaustive LMO when bag rows fit
    exact_lmo_max_combos: int = 10000

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError(f"regularizer must be positive, got {self.lam}")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if not 0.0 <= self.negative_sampling_rate <= 1.0:
            raise ValueError("negative sampling rate must be in [0, 1]")


def build_bags(
    annotations: list[TripletAnnotation],
    pair_images: list[str],
    pair_categories: list[tuple[int, int]],
) -> tuple[list[Bag], int]:
    """One bag per weak annotation: all same-image pairs matching (s, o).

    Annotations whose image has no category-matching pair are dropped;
    the second return value counts them.
    """
    if len(pair_images) != len(pair_categories):
        raise ValueError("pair_images and pair_categories must align")
    by_image: dict[str, list[int]] = {}
    for row, image_id in enumerate(pair_images):
        by_image.setdefault(image_id, []).append(row)
    bags = []
    skipped = 0
    for ann in annotations:
        rows = [
            row
            for row in by_image.get(ann.image_id, [])
            if tuple(pair_categories[row])
            == (ann.subject_category, ann.object_category)
        ]
        if not rows:
            skipped += 1
            continue
        bags.append(
            Bag(
                rows=tuple(rows),
                predicate_index=ann.predicate,
                image_id=ann.image_id,
            )
        )
    return bags, skipped


def sample_negatives(
    num_rows: int, bags: list[Bag], rate: float, seed: int = 0
) -> np.ndarray:
    """Seeded uniform sample (fraction ``rate``) of rows outside every bag."""
    if not 0.0 <= rate <= 1.0:
        raise ValueError(f"rate must be in [0, 1], got {rate}")
    in_bag = np.zeros(num_rows, dtype=bool)
    for bag in bags:
        in_bag[list(bag.rows)] = True
    candidates = np.flatnonzero(~in_bag)
    count = int(round(rate * len(candidates)))
    if count == 0:
        return np.zeros(0, dtype=np.int64)
    rng = np.random.default_rng(seed)
    picked = rng.choice(candidates, size=count, replace=False)
    return np.sort(picked).astype(np.int64)


def eliminate_w_objective(x: np.ndarray, z: np.ndarray, lam: float) -> float:
    """f(Z) with W eliminated; never materializes the N x N matrix."""
    x = np.asarray(x, dtype=np.float64)
    z = np.asarray(z, dtype=np.float64)
    factor = RidgeFactor(x, lam)
    resid = z - x @ factor.weights(z)
    return float(np.sum(z * resid)) / x.shape[0]


@dataclass
class LmoStats:
    """Bookkeeping from one or more LMO calls."""

    exact_images: int = 0
    greedy_images: int = 0
    repaired_bags: int = 0
    unresolved_bags: int = 0

    def merge(self, other: "LmoStats") -> None:
        self.exact_images += other.exact_images
        self.greedy_images += other.greedy_images
        self.repaired_bags += other.repaired_bags
        self.unresolved_bags += other.unresolved_bags


def _greedy_image_lmo(
    gradient: np.ndarray,
    cols: np.ndarray,
    bags: list[Bag],
    stats: LmoStats,
) -> None:
    """Repair ``cols`` in place so every bag has a serving row.

    Bags are processed in order; each unsatisfied bag flips its
    minimum-regret unpinned row.  Exact when bags are row-disjoint; a bag
    whose rows are all pinned elsewhere stays unsatisfied (counted).
    """
    pinned: dict[int, int] = {}
    for bag in bags:
        r = bag.predicate_index
        serving = [
            n for n in bag.rows if cols[n] == r and pinned.get(n, r) == r
        ]
        if serving:
            pinned[serving[0]] = r
            continue
        free = [n for n in bag.rows if n not in pinned]
        if not free:
            stats.unresolved_bags += 1
            continue
        regrets = gradient[free, r] - gradient[free, cols[free]]
        pick = free[int(np.argmin(regrets))]
        cols[pick] = r
        pinned[pick] = r
        stats.repaired_bags += 1


def _exact_image_lmo(
    gradient: np.ndarray,
    cols: np.ndarray,
    bags: list[Bag],
    stats: LmoStats,
) -> bool:
    """Exhaustive LMO over one image: try every choice of serving row.

    Any optimal feasible integral vertex keeps non-serving rows at their
    row argmin, so enumerating one server per bag covers the optimum.
    Returns False when every combination is inconsistent (no feasible
    integral vertex exists).
    """
    best_extra = np.inf
    best_servers = None
    for servers in itertools.product(*(bag.rows for bag in bags)):
        assignment: dict[int, int] = {}
        ok = True
        for n, bag in zip(servers, bags):
            r = bag.predicate_index
            if assignment.setdefault(n, r) != r:
                ok = False
                break
        if not ok:
            continue
        extra = sum(
            gradient[n, r] - gradient[n, cols[n]]
            for n, r in assignment.items()
        )
        if extra < best_extra - 1e-15:
            best_extra = extra
            best_servers = assignment
    if best_servers is None:
        return False
    for n, r in best_servers.items():
        cols[n] = r
    return True


def lmo(
    gradient: np.ndarray,
    bags: list[Bag],
    fixed_rows: frozenset[int] | set[int] = frozenset(),
    no_relation_index: int | None = None,
    exact_max_rows: int = 10,
    exact_max_combos: int = 10000,
) -> tuple[np.ndarray, LmoStats]:
    """Integral vertex minimizing <gradient, S> over the constrained polytope.

    Free rows take their row argmin; fixed rows stay one-hot at the
    no-relation column; bag constraints are enforced per image, by
    exhaustive enumeration when the image is small enough and by
    greedy repair otherwise.
    """
    gradient = np.asarray(gradient, dtype=np.float64)
    if not np.all(np.isfinite(gradient)):
        raise ValueError("gradient must be finite")
    n, r_cols = gradient.shape
    cols = np.argmin(gradient, axis=1).astype(np.int64)
    if fixed_rows:
        if no_relation_index is None:
            raise ValueError("fixed rows require a no-relation column")
        cols[list(fixed_rows)] = no_relation_index
    stats = LmoStats()
    by_image: dict[str, list[Bag]] = {}
    for bag in bags:
        by_image.setdefault(bag.image_id, []).append(bag)
    for image_id in sorted(by_image):
        image_bags = by_image[image_id]
        bag_rows = set()
        combos = 1
        for bag in image_bags:
            bag_rows.update(bag.rows)
            combos *= len(bag.rows)
        if len(bag_rows) <= exact_max_rows and combos <= exact_max_combos:
            if _exact_image_lmo(gradient, cols, image_bags, stats):
                stats.exact_images += 1
                continue
            stats.unresolved_bags += len(image_bags)  # no feasible vertex
            stats.greedy_images += 1
            continue
        _greedy_image_lmo(gradient, cols, image_bags, stats)
        stats.greedy_images += 1
    s = np.zeros((n, r_cols))
    s[np.arange(n), cols] = 1.0
    return s, stats


def feasible_init(
    num_rows: int,
    num_columns: int,
    bags: list[Bag],
    fixed_rows: frozenset[int] | set[int],
    no_relation_index: int | None,
    row_scores: np.ndarray | None = None,
) -> tuple[np.ndarray, int]:
    """Feasible starting point: per bag, pin its best-scoring row.

    Free rows start uniform over columns.  Within each bag the row with
    the highest detector-score product is set one-hot to the bag's
    predicate; rows already pinned by an earlier bag to a different
    predicate are avoided when possible (conflicts counted).
    """
    scores = (
        np.ones(num_rows)
        if row_scores is None
        else np.asarray(row_scores, dtype=np.float64)
    )
    z = np.full((num_rows, num_columns), 1.0 / num_columns)
    if fixed_rows:
        if no_relation_index is None:
            raise ValueError("fixed rows require a no-relation column")
        for row in fixed_rows:
            z[row] = 0.0
            z[row, no_relation_index] = 1.0
    pinned: dict[int, int] = {}
    conflicts = 0
    for bag in bags:
        r = bag.predicate_index
        usable = [n for n in bag.rows if pinned.get(n, r) == r]
        if not usable:
            usable = list(bag.rows)
            conflicts += 1
        pick = max(usable, key=lambda n: (scores[n], -n))
        z[pick] = 0.0
        z[pick, r] = 1.0
        pinned[pick] = r
    return z, conflicts


@dataclass
class FwTrainResult:
    """Everything a run produces, including solver diagnostics."""

    model: RelationModel
    assignment: AssignmentMatrix
    objective_trace: list[float]
    gap_trace: list[float]
    converged: bool
    iterations: int
    lmo_stats: LmoStats
    init_conflicts: int = 0
    negative_rows: np.ndarray = field(
        default_factory=lambda: np.zeros(0, dtype=np.int64)
    )
    max_row_violation: float = 0.0  # worst |row sum - 1| over all iterates
    max_bag_violation: float = 0.0  # worst bag shortfall over all iterates


def fw_train(
    x: np.ndarray,
    bags: list[Bag],
    num_columns: int,
    config: FwConfig,
    fixed_rows: frozenset[int] | set[int] | None = None,
    no_relation_index: int | None = None,
    row_scores: np.ndarray | None = None,
    vocabulary: Vocabulary | None = None,
    gmm: GmmModel | None = None,
    pca: PcaModel | None = None,
) -> FwTrainResult:
    """Frank-Wolfe minimization of the eliminated objective over bags.

    When ``fixed_rows`` is None and the config's negative sampling rate
    is positive, rows outside every bag are sampled (seeded) and clamped
    to the no-relation column.  Exact line search keeps the objective
    trace non-increasing; iteration stops at the relative duality gap
    ``gap_tol`` or at ``max_iters``.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    for bag in bags:
        if max(bag.rows) >= n:
            raise ValueError("bag row index out of range")
        if bag.predicate_index >= num_columns:
            raise ValueError("bag predicate outside the label columns")
    negative_rows = np.zeros(0, dtype=np.int64)
    if fixed_rows is None:
        if config.negative_sampling_rate > 0.0:
            if no_relation_index is None:
                raise ValueError(
                    "negative sampling requires a no-relation column"
                )
            negative_rows = sample_negatives(
                n, bags, config.negative_sampling_rate, config.seed
            )
        fixed = frozenset(int(r) for r in negative_rows)
    else:
        fixed = frozenset(int(r) for r in fixed_rows)
        negative_rows = np.sort(np.asarray(list(fixed), dtype=np.int64))
    factor = RidgeFactor(x, config.lam)
    z, init_conflicts = feasible_init(
        n, num_columns, bags, fixed, no_relation_index, row_scores
    )
    by_image: dict[str, list[Bag]] = {}
    for bag in bags:
        by_image.setdefault(bag.image_id, []).append(bag)
    image_rows: dict[str, np.ndarray] = {}
    if config.block_coordinate:
        seen: dict[str, list[int]] = {}
        for bag in bags:
            rows = seen.setdefault(bag.image_id, [])
            rows.extend(bag.rows)
        image_rows = {
            image_id: np.unique(np.asarray(rows, dtype=np.int64))
            for image_id, rows in seen.items()
        }
        in_block = np.zeros(n, dtype=bool)
        for rows in image_rows.values():
            in_block[rows] = True
        for row in fixed:
            in_block[row] = True
        free_block = np.flatnonzero(~in_block)  # rows in no bag, not fixed

    def objective_and_grad(zz):
        resid = zz - x @ factor.weights(zz)
        return float(np.sum(zz * resid)) / n, (2.0 / n) * resid

    def curvature(d):
        bd = d - x @ factor.weights(d)
        return (2.0 / n) * float(np.sum(d * bd))

    stats = LmoStats()
    objective_trace = []
    gap_trace = []
    converged = False
    iterations = 0
    tiny = np.finfo(np.float64).tiny
    max_row_violation = 0.0
    max_bag_violation = 0.0

    def track(zz):
        nonlocal max_row_violation, max_bag_violation
        row_dev = float(np.max(np.abs(zz.sum(axis=1) - 1.0)))
        max_row_violation = max(max_row_violation, row_dev)
        max_bag_violation = max(max_bag_violation, bag_violation(zz, bags))

    track(z)
    for _ in range(config.max_iters):
        iterations += 1
        f_val, grad = objective_and_grad(z)
        objective_trace.append(f_val)
        if config.block_coordinate and image_rows:
            sweep_gap = 0.0
            for image_id in sorted(image_rows):
                rows = image_rows[image_id]
                s_img, st = lmo(
                    grad[rows],
                    [
                        Bag(
                            rows=tuple(
                                int(np.searchsorted(rows, rr))
                                for rr in bag.rows
                            ),
                            predicate_index=bag.predicate_index,
                            image_id=bag.image_id,
                        )
                        for bag in by_image[image_id]
                    ],
                    frozenset(),
                    no_relation_index,
                    config.exact_lmo_max_rows,
                    config.exact_lmo_max_combos,
                )
                stats.merge(st)
                d = np.zeros_like(z)
                d[rows] = s_img - z[rows]
                gap = -float(np.sum(grad * d))
                sweep_gap += max(gap, 0.0)
                if gap <= 0.0:
                    continue
                curv = curvature(d)
                gamma = 1.0 if curv <= tiny else min(1.0, gap / curv)
                z = z + gamma * d
                track(z)
                f_val, grad = objective_and_grad(z)
            if free_block.size:
                s_free = np.zeros((free_block.size, num_columns))
                s_free[
                    np.arange(free_block.size),
                    np.argmin(grad[free_block], axis=1),
                ] = 1.0
                d = np.zeros_like(z)
                d[free_block] = s_free - z[free_block]
                gap = -float(np.sum(grad * d))
                sweep_gap += max(gap, 0.0)
                if gap > 0.0:
                    curv = curvature(d)
                    gamma = 1.0 if curv <= tiny else min(1.0, gap / curv)
                    z = z + gamma * d
                    track(z)
                    f_val, grad = objective_and_grad(z)
            gap_trace.append(sweep_gap)
            if sweep_gap <= config.gap_tol * max(abs(f_val), tiny):
                converged = True
                break
            continue
        s, st = lmo(
            grad,
            bags,
            fixed,
            no_relation_index,
            config.exact_lmo_max_rows,
            config.exact_lmo_max_combos,
        )
        stats.merge(st)
        d = s - z
        gap = -float(np.sum(grad * d))
        gap_trace.append(gap)
        if gap <= config.gap_tol * max(abs(f_val), tiny):
            converged = True
            break
        curv = curvature(d)
        gamma = 1.0 if curv <= tiny else min(1.0, gap / curv)
        z = z + gamma * d
        track(z)
    w = factor.weights(z)
    model = RelationModel(
        weights=w, lam=config.lam, vocabulary=vocabulary, gmm=gmm, pca=pca
    )
    assignment = AssignmentMatrix(
        z=z, fixed_rows=fixed, no_relation_index=no_relation_index
    )
    return FwTrainResult(
        model=model,
        assignment=assignment,
        objective_trace=objective_trace,
        gap_trace=gap_trace,
        converged=converged,
        iterations=iterations,
        lmo_stats=stats,
        init_conflicts=init_conflicts,
        negative_rows=negative_rows,
        max_row_violation=max_row_violation,
        max_bag_violation=max_bag_violation,
    )
