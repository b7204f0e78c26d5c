"""Model specs and the kind -> fitter dispatch used by evaluation and the CLI.

A ``ModelSpec`` is a declarative (kind, hyperparameters) pair that can be
fitted repeatedly on different folds.  The four singular kinds are registered
here; the stacking kind registers itself when :mod:`treeids.stack_select` is
imported.  All fitted models share the same duck-typed surface:
``predict_proba(rows)`` and ``predict_classes(rows)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cart import TreeParams, fit_tree, tree_feature_importance
from .core_data import Dataset
from .ensemble import (
    BoostParams,
    fit_boosted,
    fit_extra_trees,
    fit_random_forest,
    ensemble_feature_importance,
)
from .errors import InputError

SINGULAR_KINDS = ("dt", "rf", "et", "boost")
KIND_ORDER = {kind: i for i, kind in enumerate(SINGULAR_KINDS)}


@dataclass(frozen=True)
class ModelSpec:
    """Declarative model description: kind plus keyword hyperparameters.

    Recognized params: n_trees / rounds, max_depth, min_samples_split,
    min_samples_leaf, criterion, lam, gamma, learning_rate, plus stacking's
    base_specs / meta_spec / oof_folds.
    """

    kind: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in FITTERS:
            raise InputError(f"unknown model kind {self.kind!r}")


def _tree_params(params: dict, seed: int, **overrides) -> TreeParams:
    fields = {
        "max_depth": params.get("max_depth", 8),
        "min_samples_split": params.get("min_samples_split", 8),
        "min_samples_leaf": params.get("min_samples_leaf", 3),
        "criterion": params.get("criterion", "gini"),
        "feature_subset_size": params.get("feature_subset_size"),
        "seed": seed,
    }
    fields.update(overrides)
    return TreeParams(**fields)


def _fit_dt(spec, dataset, seed, threads):
    return fit_tree(dataset, _tree_params(spec.params, seed))


def _fit_rf(spec, dataset, seed, threads):
    return fit_random_forest(
        dataset, spec.params.get("n_trees", 200), _tree_params(spec.params, seed),
        seed, threads=threads, bootstrap=spec.params.get("bootstrap", True),
    )


def _fit_et(spec, dataset, seed, threads):
    return fit_extra_trees(
        dataset, spec.params.get("n_trees", 200), _tree_params(spec.params, seed),
        seed, threads=threads,
    )


def _fit_boost(spec, dataset, seed, threads):
    params = BoostParams(
        rounds=spec.params.get("n_trees", spec.params.get("rounds", 200)),
        max_depth=spec.params.get("max_depth", 8),
        lam=spec.params.get("lam", 1.0),
        gamma=spec.params.get("gamma", 0.0),
        learning_rate=spec.params.get("learning_rate", 0.3),
        seed=seed,
    )
    return fit_boosted(dataset, params, threads=threads)


FITTERS = {
    "dt": _fit_dt,
    "rf": _fit_rf,
    "et": _fit_et,
    "boost": _fit_boost,
}


def fit_model(spec: ModelSpec, dataset: Dataset, seed: int, threads: int = 1):
    try:
        fitter = FITTERS[spec.kind]
    except KeyError:
        raise InputError(f"unknown model kind {spec.kind!r}") from None
    return fitter(spec, dataset, seed, threads)


def predict_proba(model, rows: np.ndarray) -> np.ndarray:
    return model.predict_proba(rows)


def predict_classes(model, rows: np.ndarray) -> np.ndarray:
    return model.predict_classes(rows)


def model_feature_importance(model) -> np.ndarray:
    from .cart import DecisionTree

    if isinstance(model, DecisionTree):
        return tree_feature_importance(model)
    return ensemble_feature_importance(model)
