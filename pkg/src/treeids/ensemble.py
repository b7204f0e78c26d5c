"""Random forest, extra trees, and softmax gradient boosting.

All three ensembles are collections of the flat-array trees from
:mod:`treeids.cart`.  Tree fits are the unit of parallel work: each tree
draws its randomness from a stream derived from (master seed, tree index),
so the fitted model is identical for any worker count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

from numba import njit

import numpy as np

from .cart import (
    DecisionTree,
    TreeParams,
    _fit_classification,
    _TreeBuilder,
    tree_feature_importance,
)
from .core_data import Dataset
from .errors import InputError, SchemaMismatchError
from .parallel import map_ordered
from .seeding import derived_rng

RANDOM_FOREST = "random_forest"
EXTRA_TREES = "extra_trees"


@dataclass(frozen=True)
class ForestModel:
    """Bag of trees voting by majority; ties go to the lowest class id."""

    trees: tuple[DecisionTree, ...]
    kind: str
    bootstrap: bool
    feature_subset_size: int
    seed: int
    n_classes: int
    feature_names: tuple[str, ...] | None = None

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def predict_proba(self, rows: np.ndarray) -> np.ndarray:
        """Vote shares per class."""
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        votes = np.zeros((rows.shape[0], self.n_classes), dtype=np.float64)
        row_index = np.arange(rows.shape[0])
        for tree in self.trees:
            votes[row_index, tree.predict_classes(rows)] += 1.0
        return votes / len(self.trees)

    def predict_classes(self, rows: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(rows), axis=1)


def _fit_forest(dataset, n_trees, tree_params, seed, kind, bootstrap, threads) -> ForestModel:
    dataset.require_trainable()
    if n_trees < 1:
        raise InputError("forest needs at least one tree")
    rows, labels = dataset.rows, dataset.labels
    n, p = rows.shape
    subset = tree_params.feature_subset_size
    if subset is None:
        subset = max(1, int(math.floor(math.sqrt(p))))
    params = replace(tree_params, feature_subset_size=subset)

    def fit_one(i: int) -> DecisionTree:
        rng = derived_rng(seed, "tree", i)
        if bootstrap:
            sample = rng.integers(0, n, size=n)
            x, y = rows[sample], labels[sample]
        else:
            x, y = rows, labels
        return _fit_classification(x, y, dataset.n_classes, params, rng,
                                   feature_names=dataset.schema.names)

    trees = map_ordered(fit_one, range(n_trees), threads)
    return ForestModel(
        trees=tuple(trees),
        kind=kind,
        bootstrap=bootstrap,
        feature_subset_size=subset,
        seed=seed,
        n_classes=dataset.n_classes,
        feature_names=dataset.schema.names,
    )


def fit_random_forest(dataset: Dataset, n_trees: int, tree_params: TreeParams,
                      seed: int, threads: int = 1, bootstrap: bool = True) -> ForestModel:
    """T trees on bootstrap resamples, sqrt(P) features redrawn per split."""
    return _fit_forest(dataset, n_trees, tree_params, seed, RANDOM_FOREST, bootstrap, threads)


def fit_extra_trees(dataset: Dataset, n_trees: int, tree_params: TreeParams,
                    seed: int, threads: int = 1) -> ForestModel:
    """T trees on the full sample with one random threshold per candidate feature."""
    params = replace(tree_params, split_mode="random_threshold")
    return _fit_forest(dataset, n_trees, params, seed, EXTRA_TREES, bootstrap=False, threads=threads)


def majority_vote(forest: ForestModel, row) -> tuple[int, np.ndarray]:
    """One vote per tree; winner is the class with the most votes."""
    shares = forest.predict_proba(np.asarray(row, dtype=np.float64).reshape(1, -1))[0]
    return int(np.argmax(shares)), shares


@dataclass(frozen=True)
class BoostParams:
    """Boosting controls: T rounds of K depth-limited trees."""

    rounds: int = 200
    max_depth: int = 8
    lam: float = 1.0
    gamma: float = 0.0
    learning_rate: float = 0.3
    class_count: int | None = None  # None = infer from the dataset
    seed: int = 0

    def __post_init__(self):
        if self.rounds < 1:
            raise InputError("rounds must be >= 1")
        if self.max_depth < 1:
            raise InputError("max_depth must be >= 1")
        if self.lam < 0 or self.gamma < 0:
            raise InputError("penalty coefficients must be >= 0")
        if not (0.0 < self.learning_rate <= 1.0):
            raise InputError("learning_rate must be in (0, 1]")
        if self.class_count is not None and self.class_count < 2:
            raise InputError("class_count must be >= 2")


def split_gain(g_left: float, h_left: float, g_right: float, h_right: float,
               lam: float, gamma: float) -> float:
    """Objective improvement of splitting a node into two leaves."""
    g = g_left + g_right
    h = h_left + h_right
    return 0.5 * (g_left * g_left / (h_left + lam)
                  + g_right * g_right / (h_right + lam)
                  - g * g / (h + lam)) - gamma


def leaf_weight(g_sum: float, h_sum: float, lam: float) -> float:
    """Optimal additive weight for a leaf; 0 when the denominator vanishes."""
    denom = h_sum + lam
    if denom <= 0.0:
        return 0.0
    return -g_sum / denom


def presort_columns(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-column stable sort orders plus a column-major copy of the data.

    Computed once per fit and shared by every tree grown on ``rows``; the
    column-major copy keeps the per-node scans cache-friendly.
    """
    orders = np.argsort(rows, axis=0, kind="stable").astype(np.int32)
    columns = np.ascontiguousarray(rows.T)
    return orders, columns


@njit(cache=True, nogil=True)
def _scan_feature(col, g, h, order, lam, gamma, g_total, h_total, parent_term):
    """Best boundary for one feature at one node: (gain, boundary position).

    Walks the node's rows in ascending feature order accumulating gradient
    sums; candidate boundaries sit between consecutive distinct values.
    """
    n = order.shape[0]
    best_gain = -np.inf
    best_pos = -1
    cg = 0.0
    ch = 0.0
    prev = col[order[0]]
    for i in range(n - 1):
        r = order[i]
        cg += g[r]
        ch += h[r]
        nxt = col[order[i + 1]]
        if prev != nxt:
            denom_l = ch + lam
            denom_r = (h_total - ch) + lam
            if denom_l > 0.0 and denom_r > 0.0:
                gr = g_total - cg
                gain = 0.5 * (cg * cg / denom_l + gr * gr / denom_r - parent_term) - gamma
                if gain > best_gain:
                    best_gain = gain
                    best_pos = i
            prev = nxt
    return best_gain, best_pos


@njit(cache=True, nogil=True)
def _node_sums(g, h, order):
    cg = 0.0
    ch = 0.0
    for i in range(order.shape[0]):
        cg += g[order[i]]
        ch += h[order[i]]
    return cg, ch


@njit(cache=True, nogil=True)
def _partition_orders(sorted_lists, member):
    """Stable partition of every per-feature order by the membership mask."""
    p, n = sorted_lists.shape
    n_left = 0
    for i in range(n):
        if member[sorted_lists[0, i]]:
            n_left += 1
    left = np.empty((p, n_left), dtype=sorted_lists.dtype)
    right = np.empty((p, n - n_left), dtype=sorted_lists.dtype)
    for f in range(p):
        li = 0
        ri = 0
        for i in range(n):
            r = sorted_lists[f, i]
            if member[r]:
                left[f, li] = r
                li += 1
            else:
                right[f, ri] = r
                ri += 1
    return left, right


def _best_gain_split(columns, g, h, lam, gamma, sorted_lists, g_total, h_total):
    """Best exact split over all features for one node.

    ``sorted_lists[f]`` holds the node's row ids in ascending feature-f order
    (a stable filtering of the per-fit presort, identical to sorting the node
    from scratch).  Ties break toward the lowest feature, lowest threshold.
    """
    parent_term = g_total * g_total / (h_total + lam)
    best = None  # (gain, feature, threshold)
    for f in range(columns.shape[0]):
        order = sorted_lists[f]
        gain, pos = _scan_feature(columns[f], g, h, order, lam, gamma,
                                  g_total, h_total, parent_term)
        if pos < 0 or gain <= 0.0:
            continue
        if best is None or gain > best[0]:
            thr = (columns[f][order[pos]] + columns[f][order[pos + 1]]) / 2.0
            best = (float(gain), f, float(thr))
    return best


def _fit_gradient_tree(rows, g, h, params: BoostParams, feature_names=None,
                       presorted=None) -> DecisionTree:
    n, p = rows.shape
    if presorted is None:
        presorted = presort_columns(rows)
    orders, columns = presorted
    g = np.ascontiguousarray(g, dtype=np.float64)
    h = np.ascontiguousarray(h, dtype=np.float64)
    b = _TreeBuilder()
    stack = [(b.add_node(), np.ascontiguousarray(orders.T), 0)]
    member = np.zeros(n, dtype=np.bool_)  # scratch mask, cleared after each split
    while stack:
        node, sorted_lists, depth = stack.pop()
        idx = sorted_lists[0]
        b.n_samples[node] = idx.shape[0]
        g_total, h_total = _node_sums(g, h, idx)
        split = None
        if depth < params.max_depth:
            split = _best_gain_split(columns, g, h, params.lam, params.gamma,
                                     sorted_lists, g_total, h_total)
        if split is None:
            b.payload[node] = leaf_weight(g_total, h_total, params.lam) * params.learning_rate
            continue
        gain, feature, thr = split
        b.feature[node] = feature
        b.threshold[node] = thr
        b.split_score[node] = gain
        left_id = b.add_node()
        right_id = b.add_node()
        b.left[node] = left_id
        b.right[node] = right_id
        member[idx] = columns[feature][idx] <= thr
        left_lists, right_lists = _partition_orders(sorted_lists, member)
        member[idx] = False
        stack.append((right_id, right_lists, depth + 1))
        stack.append((left_id, left_lists, depth + 1))
    payload = [0.0 if w is None else w for w in b.payload]
    return DecisionTree(
        n_features=p,
        n_classes=0,
        feature=np.array(b.feature, dtype=np.int32),
        threshold=np.array(b.threshold, dtype=np.float64),
        left=np.array(b.left, dtype=np.int32),
        right=np.array(b.right, dtype=np.int32),
        n_node_samples=np.array(b.n_samples, dtype=np.int64),
        split_score=np.array(b.split_score, dtype=np.float64),
        leaf_weight=np.array(payload, dtype=np.float64),
        feature_names=tuple(feature_names) if feature_names else None,
    )


def _softmax(scores: np.ndarray) -> np.ndarray:
    shifted = scores - scores.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@dataclass(frozen=True)
class BoostedModel:
    """Staged additive model: one depth-limited tree per class per round."""

    stages: tuple[tuple[DecisionTree, ...], ...]
    base_score: np.ndarray
    params: BoostParams
    n_classes: int
    feature_names: tuple[str, ...] | None = None

    @property
    def n_features(self) -> int:
        return self.stages[0][0].n_features

    def decision_scores(self, rows: np.ndarray, n_rounds: int | None = None) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        if rows.shape[1] != self.n_features:
            raise SchemaMismatchError(
                f"row has {rows.shape[1]} features, model expects {self.n_features}"
            )
        scores = np.tile(self.base_score, (rows.shape[0], 1))
        stages = self.stages if n_rounds is None else self.stages[:n_rounds]
        for stage in stages:
            for k, tree in enumerate(stage):
                scores[:, k] += tree.predict_value(rows)
        return scores

    def predict_proba(self, rows: np.ndarray) -> np.ndarray:
        return _softmax(self.decision_scores(rows))

    def predict_classes(self, rows: np.ndarray) -> np.ndarray:
        return np.argmax(self.decision_scores(rows), axis=1)


def fit_boosted(dataset: Dataset, params: BoostParams, threads: int = 1) -> BoostedModel:
    """Softmax multiclass boosting minimizing the second-order objective.

    Per round: class probabilities from accumulated scores give gradients
    g = p - y and hessians h = p(1 - p); one tree per class is grown on
    (g, h) with exact greedy splits; leaf weights are -G/(H+lambda) scaled
    by the learning rate.
    """
    dataset.require_trainable()
    k = dataset.n_classes
    if params.class_count is not None and params.class_count != k:
        raise InputError(
            f"class_count {params.class_count} does not match the {k} classes in the data"
        )
    if k < 2:
        raise InputError("boosting needs at least two classes")
    rows, labels = dataset.rows, dataset.labels
    onehot = np.eye(k)[labels]
    scores = np.zeros((dataset.n_rows, k), dtype=np.float64)
    presorted = presort_columns(rows)  # shared by every tree in every round

    def fit_class_tree(args):
        class_id, proba = args
        g = proba[:, class_id] - onehot[:, class_id]
        h = proba[:, class_id] * (1.0 - proba[:, class_id])
        return _fit_gradient_tree(rows, g, h, params, feature_names=dataset.schema.names,
                                  presorted=presorted)

    stages = []
    for _ in range(params.rounds):
        proba = _softmax(scores)
        stage = map_ordered(fit_class_tree, [(c, proba) for c in range(k)], threads)
        for class_id, tree in enumerate(stage):
            scores[:, class_id] += tree.predict_value(rows)
        stages.append(tuple(stage))
    return BoostedModel(
        stages=tuple(stages),
        base_score=np.zeros(k, dtype=np.float64),
        params=params,
        n_classes=k,
        feature_names=dataset.schema.names,
    )


def predict_boosted(model: BoostedModel, row) -> tuple[int, np.ndarray]:
    """(argmax class, softmax probability vector) for one row."""
    proba = model.predict_proba(np.asarray(row, dtype=np.float64).reshape(1, -1))[0]
    return int(np.argmax(proba)), proba


def ensemble_feature_importance(model) -> np.ndarray:
    """Model-level importance: mean of tree importances (forests) or total
    split gain per feature (boosting), normalized to sum 1."""
    if isinstance(model, ForestModel):
        acc = np.zeros(model.n_features, dtype=np.float64)
        for tree in model.trees:
            acc += tree_feature_importance(tree)
        acc /= len(model.trees)
    elif isinstance(model, BoostedModel):
        acc = np.zeros(model.n_features, dtype=np.float64)
        for stage in model.stages:
            for tree in stage:
                split_nodes = np.nonzero(tree.feature >= 0)[0]
                for i in split_nodes:
                    acc[tree.feature[i]] += tree.split_score[i]
    else:
        raise InputError(f"no importance rule for {type(model).__name__}")
    total = acc.sum()
    if total > 0:
        acc /= total
    return acc
