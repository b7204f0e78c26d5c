"""Metrics, stratified cross-validation, and (T, D) grid search.

Detection rate and false alarm rate collapse the multiclass confusion to
binary: positive = any attack class.  Undefined rates (0/0) are reported as
None, never as 0.  Cross-validation resamples and restricts features on
training folds only; evaluation folds are never touched.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace

import numpy as np

from .core_data import Dataset, stratified_folds
from .errors import InputError
from .models import ModelSpec, fit_model
from .resample import ResamplePlan, apply_resample
from .seeding import derived_int


@dataclass(frozen=True)
class ConfusionMatrix:
    """K x K counts; rows are true classes, columns predicted classes."""

    counts: np.ndarray
    label_names: dict[int, str] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def name(self, class_id: int) -> str:
        return self.label_names.get(class_id, str(class_id))


def confusion_matrix(true_labels, predicted_labels, n_classes: int,
                     label_names: dict[int, str] | None = None) -> ConfusionMatrix:
    true_labels = np.asarray(true_labels, dtype=np.int64)
    predicted_labels = np.asarray(predicted_labels, dtype=np.int64)
    if true_labels.shape != predicted_labels.shape:
        raise InputError("label vectors differ in length")
    for arr, what in ((true_labels, "true"), (predicted_labels, "predicted")):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise InputError(f"{what} label outside [0, {n_classes})")
    counts = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(counts, (true_labels, predicted_labels), 1)
    return ConfusionMatrix(counts, dict(label_names or {}))


@dataclass(frozen=True)
class ClassMetrics:
    precision: float | None
    recall: float | None
    f1: float | None
    support: int


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float
    detection_rate: float | None
    false_alarm_rate: float | None
    f1_weighted: float
    f1_macro: float
    per_class: tuple[ClassMetrics, ...]
    train_time: float = 0.0
    predict_time: float = 0.0


def compute_metrics(cm: ConfusionMatrix, normal_class_id: int = 0) -> MetricsReport:
    """Accuracy, DR, FAR, and per-class / averaged F1 from a confusion matrix."""
    counts = cm.counts
    total = counts.sum()
    if total == 0:
        raise InputError("empty confusion matrix")
    k = counts.shape[0]
    accuracy = float(np.trace(counts)) / float(total)

    attack = np.array([c != normal_class_id for c in range(k)], dtype=bool)
    attack_rows = counts[attack, :].sum()
    normal_rows = counts[~attack, :].sum()
    detected = counts[np.ix_(attack, attack)].sum()
    false_alarms = counts[np.ix_(~attack, attack)].sum()
    detection_rate = float(detected) / float(attack_rows) if attack_rows > 0 else None
    false_alarm_rate = float(false_alarms) / float(normal_rows) if normal_rows > 0 else None

    per_class = []
    for c in range(k):
        tp = counts[c, c]
        support = int(counts[c, :].sum())
        predicted = counts[:, c].sum()
        precision = float(tp) / float(predicted) if predicted > 0 else None
        recall = float(tp) / float(support) if support > 0 else None
        if support == 0:
            f1 = None
        elif tp == 0:
            f1 = 0.0
        else:
            f1 = 2.0 * precision * recall / (precision + recall)
        per_class.append(ClassMetrics(precision, recall, f1, support))

    supports = np.array([m.support for m in per_class], dtype=np.float64)
    f1s = np.array([m.f1 if m.f1 is not None else 0.0 for m in per_class])
    with_support = supports > 0
    f1_weighted = float((f1s * supports)[with_support].sum() / supports[with_support].sum())
    f1_macro = float(f1s[with_support].mean())
    return MetricsReport(accuracy, detection_rate, false_alarm_rate,
                         f1_weighted, f1_macro, tuple(per_class))


def _mean_or_none(values) -> float | None:
    defined = [v for v in values if v is not None]
    return float(np.mean(defined)) if defined else None


@dataclass(frozen=True)
class CrossValResult:
    """Per-fold reports plus the mean-over-folds and pooled-confusion views."""

    fold_reports: tuple[MetricsReport, ...]
    aggregate: MetricsReport
    pooled: MetricsReport
    pooled_confusion: ConfusionMatrix


def cross_validate(spec: ModelSpec, dataset: Dataset, k: int = 5, seed: int = 0,
                   resample_plan: ResamplePlan | None = None,
                   feature_subset=None, normal_class_id: int = 0,
                   threads: int = 1) -> CrossValResult:
    """Stratified k-fold fit/score loop with wall-clock timing.

    The training portion of each fold is optionally oversampled and/or
    restricted to ``feature_subset``; held-out rows only ever get the feature
    restriction.  Aggregate metrics are means over folds with summed times.
    """
    if k < 2:
        raise InputError("cross-validation needs k >= 2")
    dataset.require_trainable()
    plan = stratified_folds(dataset, k, derived_int(seed, "cv-folds"))
    if feature_subset is not None:
        feature_subset = np.asarray(feature_subset, dtype=np.int64)

    fold_reports = []
    pooled = np.zeros((dataset.n_classes, dataset.n_classes), dtype=np.int64)
    for f in range(k):
        train = dataset.subset(plan.train_indices(f))
        test = dataset.subset(plan.test_indices(f))
        if resample_plan is not None:
            fold_plan = replace(resample_plan, seed=derived_int(resample_plan.seed, "cv-resample", f))
            train = apply_resample(train, fold_plan)
        if feature_subset is not None:
            train = train.select_features(feature_subset)
            test = test.select_features(feature_subset)
        t0 = time.perf_counter()
        model = fit_model(spec, train, seed=derived_int(seed, "cv-fit", f), threads=threads)
        train_time = time.perf_counter() - t0
        t0 = time.perf_counter()
        predicted = model.predict_classes(test.rows)
        predict_time = time.perf_counter() - t0
        cm = confusion_matrix(test.labels, predicted, dataset.n_classes, dataset.label_names)
        pooled += cm.counts
        report = compute_metrics(cm, normal_class_id)
        fold_reports.append(replace(report, train_time=train_time, predict_time=predict_time))

    aggregate = MetricsReport(
        accuracy=float(np.mean([r.accuracy for r in fold_reports])),
        detection_rate=_mean_or_none(r.detection_rate for r in fold_reports),
        false_alarm_rate=_mean_or_none(r.false_alarm_rate for r in fold_reports),
        f1_weighted=float(np.mean([r.f1_weighted for r in fold_reports])),
        f1_macro=float(np.mean([r.f1_macro for r in fold_reports])),
        per_class=(),
        train_time=float(sum(r.train_time for r in fold_reports)),
        predict_time=float(sum(r.predict_time for r in fold_reports)),
    )
    pooled_cm = ConfusionMatrix(pooled, dataset.label_names)
    pooled_report = replace(compute_metrics(pooled_cm, normal_class_id),
                            train_time=aggregate.train_time,
                            predict_time=aggregate.predict_time)
    return CrossValResult(tuple(fold_reports), aggregate, pooled_report, pooled_cm)


@dataclass(frozen=True)
class GridPoint:
    n_trees: int
    max_depth: int
    accuracy: float
    train_time: float


@dataclass(frozen=True)
class GridSearchResult:
    evaluated: tuple[GridPoint, ...]
    chosen: tuple[int, int]  # (n_trees, max_depth)
    stop_reason: str  # "exhausted" | "accuracy_drop"


def grid_search(model_kind: str, dataset: Dataset, t_grid, d_grid, seed: int = 0,
                k: int = 5, tolerance: float = 0.001, threads: int = 1,
                base_params: dict | None = None) -> GridSearchResult:
    """March outward over depths (outer) and tree counts (inner).

    A dimension stops growing once CV accuracy falls more than ``tolerance``
    below the best seen on that dimension (the over-fitting signal); the
    chosen point is the best accuracy overall, earliest point on ties.
    """
    t_grid = list(t_grid)
    d_grid = list(d_grid)
    if not t_grid or not d_grid:
        raise InputError("grids must be non-empty")
    if sorted(set(t_grid)) != t_grid or sorted(set(d_grid)) != d_grid:
        raise InputError("grids must be strictly ascending")

    evaluated: list[GridPoint] = []
    stop_reason = "exhausted"
    best_by_depth = -np.inf
    for depth in d_grid:
        best_by_trees = -np.inf
        for n_trees in t_grid:
            params = dict(base_params or {})
            params.update(n_trees=n_trees, max_depth=depth)
            result = cross_validate(ModelSpec(model_kind, params), dataset, k=k,
                                    seed=seed, threads=threads)
            point = GridPoint(n_trees, depth, result.aggregate.accuracy,
                              result.aggregate.train_time)
            evaluated.append(point)
            if point.accuracy > best_by_trees:
                best_by_trees = point.accuracy
            elif best_by_trees - point.accuracy > tolerance:
                stop_reason = "accuracy_drop"
                break
        if best_by_trees > best_by_depth:
            best_by_depth = best_by_trees
        elif best_by_depth - best_by_trees > tolerance:
            stop_reason = "accuracy_drop"
            break

    best = max(evaluated, key=lambda p: p.accuracy)  # first max wins ties
    return GridSearchResult(tuple(evaluated), (best.n_trees, best.max_depth), stop_reason)
