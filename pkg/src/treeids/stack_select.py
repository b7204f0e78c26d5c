"""Two-layer stacking and averaged-importance feature selection.

The stacking first layer holds the singular tree models; their out-of-fold
class-probability vectors become the meta-learner's features, so no base
model ever scores a row it was trained on.  Feature selection averages the
four learners' importance vectors and keeps the shortest ranked prefix whose
cumulative importance reaches the threshold (default 0.9).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core_data import Dataset, FeatureSchema, stratified_folds, FoldPlan
from .errors import InputError, TreeIdsError
from .models import (
    FITTERS,
    KIND_ORDER,
    ModelSpec,
    SINGULAR_KINDS,
    fit_model,
    model_feature_importance,
)
from .parallel import map_ordered
from .seeding import derived_int

# floating-point slack for the cumulative threshold comparison; nine 0.1
# importances must count as reaching 0.9
_CUM_EPS = 1e-12


@dataclass(frozen=True)
class StackingModel:
    """Fitted two-layer ensemble: base models feed a meta classifier."""

    base_kinds: tuple[str, ...]
    base_models: tuple
    meta_model: object
    oof_fold_count: int
    meta_offsets: tuple[int, ...]
    n_classes: int
    feature_names: tuple[str, ...] | None = None

    def meta_features(self, rows: np.ndarray) -> np.ndarray:
        rows = np.atleast_2d(np.asarray(rows, dtype=np.float64))
        return np.hstack([m.predict_proba(rows) for m in self.base_models])

    def predict_proba(self, rows: np.ndarray) -> np.ndarray:
        return self.meta_model.predict_proba(self.meta_features(rows))

    def predict_classes(self, rows: np.ndarray) -> np.ndarray:
        return np.argmax(self.predict_proba(rows), axis=1)


def _meta_schema(base_specs, n_classes: int) -> FeatureSchema:
    names = []
    for b, spec in enumerate(base_specs):
        names.extend(f"{spec.kind}{b}:p{c}" for c in range(n_classes))
    return FeatureSchema(tuple(names))


def generate_oof_features(dataset: Dataset, base_specs, k: int, seed: int,
                          threads: int = 1) -> tuple[Dataset, FoldPlan]:
    """Out-of-fold meta features: each base model scores only held-out rows.

    Returns the meta dataset (concatenated per-base probability vectors,
    labels carried through) and the fold plan used, for leakage audits.
    """
    if k < 2:
        raise InputError("OOF generation needs at least 2 folds")
    dataset.require_trainable()
    plan = stratified_folds(dataset, k, derived_int(seed, "oof-folds"))
    n_classes = dataset.n_classes
    width = n_classes * len(base_specs)
    meta = np.zeros((dataset.n_rows, width), dtype=np.float64)

    tasks = [(b, f) for b in range(len(base_specs)) for f in range(k)]

    def run(task):
        b, f = task
        spec = base_specs[b]
        train_idx = plan.train_indices(f)
        test_idx = plan.test_indices(f)
        try:
            model = fit_model(spec, dataset.subset(train_idx),
                              seed=derived_int(seed, "oof", b, f), threads=1)
            proba = model.predict_proba(dataset.rows[test_idx])
        except Exception as exc:
            raise TreeIdsError(f"base model {spec.kind!r} failed on fold {f}: {exc}") from exc
        return b, test_idx, proba

    for b, test_idx, proba in map_ordered(run, tasks, threads):
        meta[test_idx, b * n_classes:(b + 1) * n_classes] = proba
    meta_dataset = Dataset(_meta_schema(base_specs, n_classes), meta,
                           dataset.labels, dataset.label_names)
    return meta_dataset, plan


@dataclass(frozen=True)
class SingularReport:
    """Validation summary for one singular model kind."""

    kind: str
    accuracy: float
    train_time: float


def select_base_and_meta(reports) -> tuple[tuple[str, ...], str]:
    """Keep the 3 best of the 4 singular kinds; the best becomes the meta.

    Ranking is by accuracy, ties broken by lower training time, then by the
    fixed kind order dt < rf < et < boost.  Returned base kinds are in fixed
    kind order so the meta-feature layout is reproducible.
    """
    by_kind = {r.kind: r for r in reports}
    missing = [k for k in SINGULAR_KINDS if k not in by_kind]
    if missing:
        raise InputError(f"reports missing for kinds: {missing}")
    ranked = sorted(
        (by_kind[k] for k in SINGULAR_KINDS),
        key=lambda r: (-r.accuracy, r.train_time, KIND_ORDER[r.kind]),
    )
    keep = {r.kind for r in ranked[:3]}
    bases = tuple(k for k in SINGULAR_KINDS if k in keep)
    return bases, ranked[0].kind


def fit_stacking(dataset: Dataset, base_specs, meta_spec: ModelSpec, k: int = 5,
                 seed: int = 0, threads: int = 1) -> StackingModel:
    """Meta model trained on OOF features; bases refit on all rows for deployment."""
    base_specs = list(base_specs)
    if not base_specs:
        raise InputError("stacking needs at least one base model")
    meta_dataset, _ = generate_oof_features(dataset, base_specs, k, seed, threads)
    meta_model = fit_model(meta_spec, meta_dataset,
                           seed=derived_int(seed, "meta"), threads=threads)
    bases = map_ordered(
        lambda b: fit_model(base_specs[b], dataset,
                            seed=derived_int(seed, "base-final", b), threads=1),
        range(len(base_specs)), threads,
    )
    n_classes = dataset.n_classes
    offsets = tuple(b * n_classes for b in range(len(base_specs)))
    return StackingModel(
        base_kinds=tuple(s.kind for s in base_specs),
        base_models=tuple(bases),
        meta_model=meta_model,
        oof_fold_count=k,
        meta_offsets=offsets,
        n_classes=n_classes,
        feature_names=dataset.schema.names,
    )


def predict_stacking(model: StackingModel, row) -> tuple[int, np.ndarray]:
    proba = model.predict_proba(np.asarray(row, dtype=np.float64).reshape(1, -1))[0]
    return int(np.argmax(proba)), proba


def _fit_stacking_spec(spec, dataset, seed, threads):
    params = spec.params
    base_specs = params.get("base_specs")
    meta_spec = params.get("meta_spec")
    if not base_specs or meta_spec is None:
        raise InputError("stacking spec needs base_specs and meta_spec")
    return fit_stacking(dataset, base_specs, meta_spec,
                        k=params.get("oof_folds", 5), seed=seed, threads=threads)


FITTERS["stacking"] = _fit_stacking_spec


@dataclass(frozen=True)
class ImportanceReport:
    """Averaged feature importance with ranking and threshold selection."""

    per_model: dict[str, np.ndarray]
    averaged: np.ndarray
    ranking: np.ndarray
    selected: np.ndarray
    threshold: float


def average_importance(per_model: dict[str, np.ndarray], threshold: float = 0.9) -> ImportanceReport:
    """Mean of the non-zero importance vectors, renormalized and ranked."""
    vectors = {name: np.asarray(v, dtype=np.float64) for name, v in per_model.items()}
    lengths = {v.shape[0] for v in vectors.values()}
    if len(lengths) != 1:
        raise InputError("importance vectors differ in length")
    active = [v for v in vectors.values() if v.sum() > 0]
    if not active:
        raise InputError("no splits anywhere: every importance vector is zero")
    averaged = np.mean(active, axis=0)
    averaged = averaged / averaged.sum()
    ranking = np.argsort(-averaged, kind="stable")
    report = ImportanceReport(vectors, averaged, ranking, np.empty(0, dtype=np.int64), threshold)
    selected = select_features(report, threshold)
    return ImportanceReport(vectors, averaged, ranking, selected, threshold)


def select_features(report: ImportanceReport, cumulative_threshold: float = 0.9) -> np.ndarray:
    """Shortest ranked prefix whose cumulative importance reaches the threshold."""
    cums = np.cumsum(report.averaged[report.ranking])
    reached = np.nonzero(cums >= cumulative_threshold - _CUM_EPS)[0]
    stop = int(reached[0]) + 1 if reached.size else report.ranking.shape[0]
    return report.ranking[:stop].copy()


def _two_class_subset(dataset: Dataset, attack_class: int, normal_class: int) -> Dataset:
    for class_id in (normal_class, attack_class):
        if class_id not in dataset.label_names:
            raise InputError(f"class id {class_id} not present in the dataset")
    mask = (dataset.labels == normal_class) | (dataset.labels == attack_class)
    if not (dataset.labels[mask] == normal_class).any() or not (dataset.labels[mask] == attack_class).any():
        raise InputError("both classes must have at least one row")
    labels = np.where(dataset.labels[mask] == attack_class, 1, 0)
    names = {0: dataset.label_names[normal_class], 1: dataset.label_names[attack_class]}
    return Dataset(dataset.schema, dataset.rows[mask], labels, names)


def singular_importances(dataset: Dataset, n_trees: int = 200, seed: int = 0,
                         threads: int = 1, extra_params: dict | None = None) -> dict[str, np.ndarray]:
    """Importance vector from each of the four singular learners."""
    params = dict(extra_params or {})
    params["n_trees"] = n_trees
    out = {}
    for kind in SINGULAR_KINDS:
        model = fit_model(ModelSpec(kind, params), dataset,
                          seed=derived_int(seed, "importance", kind), threads=threads)
        out[kind] = model_feature_importance(model)
    return out


def per_attack_importance(dataset: Dataset, attack_class: int, normal_class: int,
                          n_trees: int = 200, seed: int = 0, threads: int = 1,
                          extra_params: dict | None = None) -> list[tuple[str, float]]:
    """Averaged importance ranking on the normal-vs-one-attack subset."""
    subset = _two_class_subset(dataset, attack_class, normal_class)
    report = average_importance(
        singular_importances(subset, n_trees=n_trees, seed=seed,
                             threads=threads, extra_params=extra_params)
    )
    names = subset.schema.names
    return [(names[i], float(report.averaged[i])) for i in report.ranking]
