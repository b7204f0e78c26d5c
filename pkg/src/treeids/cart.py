"""CART decision trees: impurity measures, split search, growth, prediction.

Trees are stored as flat parallel arrays (feature/threshold/children per
node) so batch prediction is a handful of vectorized hops instead of a
Python walk per row.  Node order is deterministic preorder (left subtree
first), which keeps RNG consumption and serialization stable.

Split convention: ``x <= threshold`` routes left; equality goes left.  The
convention is written into every saved model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_data import Dataset
from .errors import InputError, SchemaMismatchError
from .seeding import derived_rng

SPLIT_CONVENTION = "le-left"

LEAF = -1


@dataclass(frozen=True)
class TreeParams:
    """Growth controls; defaults follow the tuned values used throughout."""

    max_depth: int = 8
    min_samples_split: int = 8
    min_samples_leaf: int = 3
    criterion: str = "gini"
    feature_subset_size: int | None = None  # None = consider all features
    split_mode: str = "exact"  # "exact" | "random_threshold"
    seed: int = 0

    def __post_init__(self):
        if self.max_depth < 1:
            raise InputError("max_depth must be >= 1")
        if self.min_samples_split < 2:
            raise InputError("min_samples_split must be >= 2")
        if self.min_samples_leaf < 1:
            raise InputError("min_samples_leaf must be >= 1")
        if self.criterion not in ("gini", "entropy"):
            raise InputError(f"unknown criterion {self.criterion!r}")
        if self.split_mode not in ("exact", "random_threshold"):
            raise InputError(f"unknown split_mode {self.split_mode!r}")
        if self.feature_subset_size is not None and self.feature_subset_size < 1:
            raise InputError("feature_subset_size must be >= 1")


@dataclass(frozen=True)
class SplitCandidate:
    feature_index: int
    threshold: float
    impurity_decrease: float
    left_count: int
    right_count: int


def gini_impurity(class_counts) -> float:
    """1 - sum(p_i^2) over class proportions."""
    counts = np.asarray(class_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise InputError("impurity of an empty node is undefined")
    p = counts / total
    return float(1.0 - np.sum(p * p))


def entropy_impurity(class_counts) -> float:
    """-sum(p_i * log2 p_i) with the 0 * log 0 = 0 convention."""
    counts = np.asarray(class_counts, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        raise InputError("impurity of an empty node is undefined")
    p = counts / total
    return float(-np.sum(np.where(p > 0.0, p * np.log2(np.where(p > 0.0, p, 1.0)), 0.0)))


def _impurity_scalar(counts, criterion: str) -> float:
    return gini_impurity(counts) if criterion == "gini" else entropy_impurity(counts)


def _impurity_2d(counts: np.ndarray, totals: np.ndarray, criterion: str) -> np.ndarray:
    # Same elementary operations as the scalar versions so exhaustive oracles
    # reproduce these values bit for bit.
    p = counts / totals[:, None]
    if criterion == "gini":
        return 1.0 - np.sum(p * p, axis=1)
    return -np.sum(np.where(p > 0.0, p * np.log2(np.where(p > 0.0, p, 1.0)), 0.0), axis=1)


def best_split(
    rows: np.ndarray,
    labels: np.ndarray,
    params: TreeParams,
    feature_subset=None,
    n_classes: int | None = None,
    rng: np.random.Generator | None = None,
) -> SplitCandidate | None:
    """Best (feature, threshold) by weighted impurity decrease, or None.

    Exact mode scans midpoints between consecutive distinct sorted values;
    random_threshold mode draws one uniform threshold per candidate feature.
    Ties break toward the lowest feature index, then the lowest threshold.
    Candidates violating min_samples_leaf or with non-positive decrease are
    rejected.
    """
    rows = np.asarray(rows, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    k = n_classes if n_classes is not None else int(labels.max()) + 1
    if feature_subset is None:
        feature_subset = np.arange(rows.shape[1])
    else:
        feature_subset = np.sort(np.asarray(feature_subset, dtype=np.int64))
    total_counts = np.bincount(labels, minlength=k)
    parent_impurity = _impurity_scalar(total_counts, params.criterion)
    min_leaf = params.min_samples_leaf

    best: SplitCandidate | None = None
    if params.split_mode == "random_threshold" and rng is None:
        rng = derived_rng(params.seed, "best_split")

    for f in feature_subset:
        x = rows[:, f]
        if params.split_mode == "exact":
            order = np.argsort(x, kind="stable")
            xs = x[order]
            if xs[0] == xs[-1]:
                continue
            onehot = np.zeros((n, k), dtype=np.int64)
            onehot[np.arange(n), labels[order]] = 1
            cum = np.cumsum(onehot, axis=0)
            boundaries = np.nonzero(xs[1:] != xs[:-1])[0]
            n_left = boundaries + 1
            n_right = n - n_left
            valid = (n_left >= min_leaf) & (n_right >= min_leaf)
            if not valid.any():
                continue
            boundaries = boundaries[valid]
            n_left = n_left[valid]
            n_right = n_right[valid]
            counts_left = cum[boundaries]
            counts_right = total_counts - counts_left
            imp_left = _impurity_2d(counts_left, n_left.astype(np.float64), params.criterion)
            imp_right = _impurity_2d(counts_right, n_right.astype(np.float64), params.criterion)
            decrease = parent_impurity - (n_left / n) * imp_left - (n_right / n) * imp_right
            i = int(np.argmax(decrease))
            if decrease[i] <= 0.0:
                continue
            if best is None or decrease[i] > best.impurity_decrease:
                b = boundaries[i]
                thr = (xs[b] + xs[b + 1]) / 2.0
                best = SplitCandidate(int(f), float(thr), float(decrease[i]), int(n_left[i]), int(n_right[i]))
        else:
            lo = x.min()
            hi = x.max()
            if lo == hi:
                continue
            thr = float(rng.uniform(lo, hi))
            left = x <= thr
            n_left = int(left.sum())
            n_right = n - n_left
            if n_left < min_leaf or n_right < min_leaf:
                continue
            counts_left = np.bincount(labels[left], minlength=k)
            counts_right = total_counts - counts_left
            imp_left = _impurity_scalar(counts_left, params.criterion)
            imp_right = _impurity_scalar(counts_right, params.criterion)
            decrease = parent_impurity - (n_left / n) * imp_left - (n_right / n) * imp_right
            if decrease <= 0.0:
                continue
            if best is None or decrease > best.impurity_decrease:
                best = SplitCandidate(int(f), thr, float(decrease), n_left, n_right)
    return best


@dataclass(frozen=True)
class DecisionTree:
    """Fitted binary tree over flat node arrays.

    Leaves carry either per-class sample counts (classification) or a single
    additive weight (gradient boosting); exactly one of ``class_counts`` and
    ``leaf_weight`` is set.  ``split_score`` holds the impurity decrease
    (classification) or objective gain (boosting) realized at each split node.
    """

    n_features: int
    n_classes: int
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n_node_samples: np.ndarray
    split_score: np.ndarray
    class_counts: np.ndarray | None = None
    leaf_weight: np.ndarray | None = None
    params: TreeParams | None = None
    feature_names: tuple[str, ...] | None = None

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_leaves(self) -> int:
        return int((self.feature == LEAF).sum())

    @property
    def n_splits(self) -> int:
        return self.n_nodes - self.n_leaves

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        out = 0
        for i in range(self.n_nodes):  # children follow parents in preorder
            if self.feature[i] != LEAF:
                depths[self.left[i]] = depths[i] + 1
                depths[self.right[i]] = depths[i] + 1
            else:
                out = max(out, int(depths[i]))
        return out

    def _check_width(self, rows: np.ndarray):
        if rows.shape[-1] != self.n_features:
            raise SchemaMismatchError(
                f"row has {rows.shape[-1]} features, tree expects {self.n_features}"
            )

    def apply(self, rows: np.ndarray) -> np.ndarray:
        """Leaf index per row."""
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        self._check_width(rows)
        idx = np.zeros(rows.shape[0], dtype=np.int64)
        while True:
            active = np.nonzero(self.feature[idx] >= 0)[0]
            if active.size == 0:
                return idx
            node = idx[active]
            go_left = rows[active, self.feature[node]] <= self.threshold[node]
            idx[active] = np.where(go_left, self.left[node], self.right[node])

    def predict_proba(self, rows: np.ndarray) -> np.ndarray:
        leaves = self.apply(rows)
        counts = self.class_counts[leaves].astype(np.float64)
        return counts / counts.sum(axis=1, keepdims=True)

    def predict_classes(self, rows: np.ndarray) -> np.ndarray:
        leaves = self.apply(rows)
        return np.argmax(self.class_counts[leaves], axis=1)

    def predict_value(self, rows: np.ndarray) -> np.ndarray:
        """Additive leaf weights (boosting payload)."""
        return self.leaf_weight[self.apply(rows)]


def predict_tree(tree: DecisionTree, row) -> tuple[int, np.ndarray]:
    """Route one row to a leaf: (predicted class, normalized distribution)."""
    proba = tree.predict_proba(np.asarray(row, dtype=np.float64).reshape(1, -1))[0]
    return int(np.argmax(proba)), proba


class _TreeBuilder:
    """Accumulates nodes in preorder; children patched in as they are created."""

    def __init__(self):
        self.feature = []
        self.threshold = []
        self.left = []
        self.right = []
        self.n_samples = []
        self.split_score = []
        self.payload = []

    def add_node(self) -> int:
        self.feature.append(LEAF)
        self.threshold.append(0.0)
        self.left.append(LEAF)
        self.right.append(LEAF)
        self.n_samples.append(0)
        self.split_score.append(0.0)
        self.payload.append(None)
        return len(self.feature) - 1


def _fit_classification(
    rows: np.ndarray,
    labels: np.ndarray,
    n_classes: int,
    params: TreeParams,
    rng: np.random.Generator,
    feature_names=None,
) -> DecisionTree:
    n, p = rows.shape
    subset_size = params.feature_subset_size
    if subset_size is None or subset_size >= p:
        subset_size = p
    b = _TreeBuilder()
    stack = [(b.add_node(), np.arange(n), 0)]
    while stack:
        node, idx, depth = stack.pop()
        counts = np.bincount(labels[idx], minlength=n_classes)
        b.n_samples[node] = idx.shape[0]
        b.payload[node] = counts
        if counts.max() == idx.shape[0] or depth >= params.max_depth or idx.shape[0] < params.min_samples_split:
            continue
        if subset_size == p:
            candidates = None
        else:
            candidates = np.sort(rng.choice(p, size=subset_size, replace=False))
        split = best_split(rows[idx], labels[idx], params, candidates, n_classes=n_classes, rng=rng)
        if split is None:
            continue
        b.feature[node] = split.feature_index
        b.threshold[node] = split.threshold
        b.split_score[node] = split.impurity_decrease
        go_left = rows[idx, split.feature_index] <= split.threshold
        left_id = b.add_node()
        right_id = b.add_node()
        b.left[node] = left_id
        b.right[node] = right_id
        # push right first so the left subtree is processed (and numbered) first
        stack.append((right_id, idx[~go_left], depth + 1))
        stack.append((left_id, idx[go_left], depth + 1))
    return DecisionTree(
        n_features=p,
        n_classes=n_classes,
        feature=np.array(b.feature, dtype=np.int32),
        threshold=np.array(b.threshold, dtype=np.float64),
        left=np.array(b.left, dtype=np.int32),
        right=np.array(b.right, dtype=np.int32),
        n_node_samples=np.array(b.n_samples, dtype=np.int64),
        split_score=np.array(b.split_score, dtype=np.float64),
        class_counts=np.array(b.payload, dtype=np.int64),
        params=params,
        feature_names=tuple(feature_names) if feature_names else None,
    )


def fit_tree(dataset: Dataset, params: TreeParams) -> DecisionTree:
    """Greedy recursive growth until purity, max depth, or no useful split."""
    dataset.require_trainable()
    rng = derived_rng(params.seed, "tree", 0)
    return _fit_classification(
        dataset.rows, dataset.labels, dataset.n_classes, params, rng,
        feature_names=dataset.schema.names,
    )


def cost_complexity(tree: DecisionTree, alpha: float, eval_dataset: Dataset) -> float:
    """Misclassification rate on eval data plus alpha times the leaf count."""
    if alpha < 0:
        raise InputError("alpha must be >= 0")
    if eval_dataset.n_rows == 0:
        raise InputError("empty evaluation set")
    predicted = tree.predict_classes(eval_dataset.rows)
    risk = float(np.mean(predicted != eval_dataset.labels))
    return risk + alpha * tree.n_leaves


def tree_feature_importance(tree: DecisionTree) -> np.ndarray:
    """Split-score importance, weighted by node share, normalized to sum 1.

    A tree with no splits yields the all-zero vector.
    """
    importance = np.zeros(tree.n_features, dtype=np.float64)
    total = tree.n_node_samples[0]
    split_nodes = np.nonzero(tree.feature >= 0)[0]
    for i in split_nodes:
        importance[tree.feature[i]] += (tree.n_node_samples[i] / total) * tree.split_score[i]
    s = importance.sum()
    if s > 0:
        importance /= s
    return importance
