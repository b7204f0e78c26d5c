"""Random oversampling and SMOTE for class-imbalanced training data.

Both methods append synthetic rows after the originals, never touch
majority classes, and draw from per-class seeded streams so results do not
depend on thread count or class processing order.  Resampling is meant for
training folds only; evaluation folds must stay untouched.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_data import Dataset
from .errors import InputError
from .seeding import derived_rng


@dataclass(frozen=True)
class ResamplePlan:
    """Oversampling request.

    ``targets`` maps class id to desired count; when None, every minority
    class is raised to ``target_ratio`` times the largest class size (and
    never below its current count).
    """

    method: str = "smote"
    k_neighbors: int = 5
    seed: int = 0
    target_ratio: float = 1.0
    targets: dict[int, int] | None = None

    def __post_init__(self):
        if self.method not in ("random", "smote"):
            raise InputError(f"unknown resample method {self.method!r}")
        if self.k_neighbors < 1:
            raise InputError("k_neighbors must be >= 1")
        if self.target_ratio <= 0:
            raise InputError("target_ratio must be positive")


def resolve_targets(dataset: Dataset, plan: ResamplePlan) -> dict[int, int]:
    counts = dataset.class_counts()
    if plan.targets is not None:
        for class_id, target in plan.targets.items():
            if target < counts[class_id]:
                raise InputError(
                    f"target {target} for class {class_id} is below its current count {counts[class_id]}"
                )
        return dict(plan.targets)
    top = int(round(plan.target_ratio * counts.max()))
    return {c: max(int(counts[c]), top) for c in range(len(counts)) if counts[c] > 0}


def _append_rows(dataset: Dataset, new_rows: list[np.ndarray], new_labels: list[int]) -> Dataset:
    if not new_rows:
        return dataset
    rows = np.vstack([dataset.rows, np.vstack(new_rows)])
    labels = np.concatenate([dataset.labels, np.asarray(new_labels, dtype=np.int64)])
    return Dataset(dataset.schema, rows, labels, dataset.label_names)


def random_oversample(dataset: Dataset, plan: ResamplePlan) -> Dataset:
    """Pad minority classes by copying their own rows uniformly with replacement."""
    if plan.method != "random":
        raise InputError("plan.method must be 'random'")
    dataset.require_trainable()
    targets = resolve_targets(dataset, plan)
    counts = dataset.class_counts()
    added_rows, added_labels = [], []
    for class_id in sorted(targets):
        need = targets[class_id] - int(counts[class_id])
        if need <= 0:
            continue
        members = np.nonzero(dataset.labels == class_id)[0]
        rng = derived_rng(plan.seed, "random-oversample", class_id)
        picks = members[rng.integers(0, members.shape[0], size=need)]
        added_rows.append(dataset.rows[picks])
        added_labels.extend([class_id] * need)
    return _append_rows(dataset, added_rows, added_labels)


def _class_knn(points: np.ndarray, k: int, chunk: int = 256) -> np.ndarray:
    """Indices of the k nearest neighbors per row (self excluded), brute force."""
    m = points.shape[0]
    sq = np.einsum("ij,ij->i", points, points)
    out = np.empty((m, k), dtype=np.int64)
    for start in range(0, m, chunk):
        stop = min(start + chunk, m)
        d2 = sq[start:stop, None] + sq[None, :] - 2.0 * points[start:stop] @ points.T
        d2[np.arange(stop - start), np.arange(start, stop)] = np.inf
        cand = np.argpartition(d2, kth=k - 1, axis=1)[:, :k]
        # canonical order inside the chosen k: by distance, then index
        cd = np.take_along_axis(d2, cand, axis=1)
        order = np.lexsort((cand, cd), axis=1)
        out[start:stop] = np.take_along_axis(cand, order, axis=1)
    return out


def smote_oversample(dataset: Dataset, plan: ResamplePlan) -> Dataset:
    """Synthesize minority rows by interpolating toward same-class neighbors.

    Each synthetic row is x + u * (x_nn - x) for a uniformly chosen class
    member x, one of its k nearest same-class neighbors x_nn (Euclidean
    distance), and u uniform in [0, 1].  k silently drops to class size - 1
    for classes too small to supply k neighbors.
    """
    if plan.method != "smote":
        raise InputError("plan.method must be 'smote'")
    dataset.require_trainable()
    targets = resolve_targets(dataset, plan)
    counts = dataset.class_counts()
    added_rows, added_labels = [], []
    for class_id in sorted(targets):
        need = targets[class_id] - int(counts[class_id])
        if need <= 0:
            continue
        members = np.nonzero(dataset.labels == class_id)[0]
        m = members.shape[0]
        if m < 2:
            raise InputError(
                f"class {class_id} has {m} sample(s); SMOTE needs at least 2 "
                "(use random oversampling instead)"
            )
        k = min(plan.k_neighbors, m - 1)
        points = dataset.rows[members]
        neighbors = _class_knn(points, k)
        rng = derived_rng(plan.seed, "smote", class_id)
        seeds = rng.integers(0, m, size=need)
        picks = rng.integers(0, k, size=need)
        u = rng.random(size=need)
        base = points[seeds]
        partner = points[neighbors[seeds, picks]]
        added_rows.append(base + u[:, None] * (partner - base))
        added_labels.extend([class_id] * need)
    return _append_rows(dataset, added_rows, added_labels)


def apply_resample(dataset: Dataset, plan: ResamplePlan) -> Dataset:
    if plan.method == "random":
        return random_oversample(dataset, plan)
    return smote_oversample(dataset, plan)
