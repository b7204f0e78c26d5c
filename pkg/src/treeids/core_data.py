"""Dataset container, min-max normalization, row cleaning, stratified folds.

Everything downstream (resampling, learners, evaluation) works on the
``Dataset`` defined here.  Datasets are immutable after construction: the
arrays are copied in and marked read-only, so they can be shared freely
across worker threads.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InputError, SchemaMismatchError
from .seeding import derived_rng

NUMERIC = "numeric"
ONEHOT = "onehot"


@dataclass(frozen=True)
class FeatureSchema:
    """Ordered feature names with a kind tag per column.

    One-hot columns carry the group id of the source field they were expanded
    from; numeric columns carry none.
    """

    names: tuple[str, ...]
    kinds: tuple[str, ...] = ()
    group_ids: tuple[str | None, ...] = ()

    def __post_init__(self):
        names = tuple(self.names)
        kinds = tuple(self.kinds) if self.kinds else (NUMERIC,) * len(names)
        groups = tuple(self.group_ids) if self.group_ids else (None,) * len(names)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "kinds", kinds)
        object.__setattr__(self, "group_ids", groups)
        if not names:
            raise InputError("schema has no features")
        if len(set(names)) != len(names):
            raise InputError("feature names must be unique")
        if any(not n for n in names):
            raise InputError("feature names must be non-empty")
        if len(kinds) != len(names) or len(groups) != len(names):
            raise InputError("schema field lengths disagree")
        for name, kind, group in zip(names, kinds, groups):
            if kind not in (NUMERIC, ONEHOT):
                raise InputError(f"unknown feature kind {kind!r} for {name!r}")
            if kind == ONEHOT and group is None:
                raise InputError(f"one-hot feature {name!r} has no group id")
            if kind == NUMERIC and group is not None:
                raise InputError(f"numeric feature {name!r} must not have a group id")

    @property
    def n_features(self) -> int:
        return len(self.names)

    def numeric_mask(self) -> np.ndarray:
        return np.array([k == NUMERIC for k in self.kinds], dtype=bool)


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class Dataset:
    """N x P feature matrix with integer class labels and a label-name map.

    Values may contain NaN/Inf only between ingestion and
    :func:`drop_invalid_rows`; learners require finite data (checked via
    :meth:`require_trainable`).
    """

    schema: FeatureSchema
    rows: np.ndarray
    labels: np.ndarray
    label_names: dict[int, str] = field(default_factory=dict)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.float64)
        if rows.ndim != 2:
            raise InputError("rows must be a 2-D matrix")
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 1 or labels.shape[0] != rows.shape[0]:
            raise InputError("labels must be one per row")
        if rows.shape[1] != self.schema.n_features:
            raise SchemaMismatchError(
                f"rows have {rows.shape[1]} columns, schema has {self.schema.n_features}"
            )
        names = dict(self.label_names)
        missing = sorted(set(labels.tolist()) - set(names))
        if missing:
            raise InputError(f"labels without names: {missing}")
        object.__setattr__(self, "rows", _frozen(rows))
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "label_names", names)

    @property
    def n_rows(self) -> int:
        return self.rows.shape[0]

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.label_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def require_trainable(self):
        if self.n_rows < 1 or self.n_features < 1:
            raise InputError("dataset must have at least one row and one feature")
        if not np.isfinite(self.rows).all():
            raise InputError("dataset contains NaN/Inf; run drop_invalid_rows first")

    def subset(self, index: np.ndarray) -> "Dataset":
        return Dataset(self.schema, self.rows[index], self.labels[index], self.label_names)

    def select_features(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.int64)
        schema = FeatureSchema(
            tuple(self.schema.names[i] for i in idx),
            tuple(self.schema.kinds[i] for i in idx),
            tuple(self.schema.group_ids[i] for i in idx),
        )
        return Dataset(schema, self.rows[:, idx], self.labels, self.label_names)


@dataclass(frozen=True)
class NormalizationParams:
    """Per-feature min/max plus a flag for degenerate (max = min) features."""

    feature_names: tuple[str, ...]
    mins: np.ndarray
    maxs: np.ndarray
    degenerate: np.ndarray

    def __post_init__(self):
        mins = np.asarray(self.mins, dtype=np.float64)
        maxs = np.asarray(self.maxs, dtype=np.float64)
        degenerate = np.asarray(self.degenerate, dtype=bool)
        n = len(self.feature_names)
        if not (mins.shape == maxs.shape == degenerate.shape == (n,)):
            raise InputError("normalization params must be one per feature")
        if np.any(mins > maxs):
            raise InputError("feature min exceeds max")
        object.__setattr__(self, "feature_names", tuple(self.feature_names))
        object.__setattr__(self, "mins", _frozen(mins))
        object.__setattr__(self, "maxs", _frozen(maxs))
        object.__setattr__(self, "degenerate", _frozen(degenerate))


def compute_min_max(dataset: Dataset) -> NormalizationParams:
    """Per-feature extrema over all rows; degenerate where max equals min."""
    if dataset.n_rows == 0:
        raise InputError("no rows")
    mins = dataset.rows.min(axis=0)
    maxs = dataset.rows.max(axis=0)
    return NormalizationParams(dataset.schema.names, mins, maxs, mins == maxs)


def normalize(dataset: Dataset, params: NormalizationParams) -> Dataset:
    """Scale numeric features to [0, 1] as (x - min) / (max - min).

    Degenerate features map to 0.0; values outside the training range clamp
    to [0, 1]; one-hot columns pass through untouched.
    """
    if params.feature_names != dataset.schema.names:
        raise SchemaMismatchError("normalization params computed for a different schema")
    rows = normalize_rows(dataset.rows, dataset.schema, params)
    return Dataset(dataset.schema, rows, dataset.labels, dataset.label_names)


def normalize_rows(rows: np.ndarray, schema: FeatureSchema, params: NormalizationParams) -> np.ndarray:
    """Array-level normalize for streaming paths that bypass Dataset."""
    rows = np.array(rows, dtype=np.float64, copy=True)
    span = params.maxs - params.mins
    scale = np.where(params.degenerate, 1.0, span)
    apply = schema.numeric_mask()
    scaled = (rows - params.mins) / scale
    scaled = np.clip(scaled, 0.0, 1.0)
    scaled[:, params.degenerate] = 0.0
    rows[:, apply] = scaled[:, apply]
    return rows


def drop_invalid_rows(dataset: Dataset) -> tuple[Dataset, int]:
    """Remove rows containing NaN/Inf cells; surviving rows keep value and order."""
    keep = np.isfinite(dataset.rows).all(axis=1)
    removed = int((~keep).sum())
    if removed == dataset.n_rows:
        raise InputError("dataset empty after cleaning")
    if removed == 0:
        return dataset, 0
    return dataset.subset(keep), removed


@dataclass(frozen=True)
class FoldPlan:
    """Stratified fold assignment: fold index in [0, k) per row."""

    k: int
    assignments: np.ndarray

    def __post_init__(self):
        assignments = np.asarray(self.assignments, dtype=np.int64)
        object.__setattr__(self, "assignments", _frozen(assignments))

    def test_indices(self, fold: int) -> np.ndarray:
        return np.nonzero(self.assignments == fold)[0]

    def train_indices(self, fold: int) -> np.ndarray:
        return np.nonzero(self.assignments != fold)[0]


def stratified_folds(dataset: Dataset, k: int, seed: int) -> FoldPlan:
    """Deterministic stratified k-fold assignment.

    Per class, shuffled indices are dealt onto a fold counter that rolls
    across classes, so per-class fold counts differ by at most one and every
    fold is populated whenever N >= k.  Classes with fewer than k samples are
    spread over as many folds as they have samples.
    """
    if k < 2:
        raise InputError("fold count must be at least 2")
    if k > dataset.n_rows:
        raise InputError(f"cannot split {dataset.n_rows} rows into {k} folds")
    assignments = np.empty(dataset.n_rows, dtype=np.int64)
    cursor = 0
    for class_id in sorted(set(dataset.labels.tolist())):
        idx = np.nonzero(dataset.labels == class_id)[0]
        rng = derived_rng(seed, "folds", class_id)
        idx = idx[rng.permutation(len(idx))]
        assignments[idx] = (cursor + np.arange(len(idx))) % k
        cursor += len(idx)
    return FoldPlan(k, assignments)
