"""Model artifact persistence.

Artifacts are canonical JSON: keys sorted, two-space indent, floats printed
with 17 significant digits.  The format round-trips exactly, so
save -> load -> save reproduces the file byte for byte and reloaded models
predict bit-identically.  Trees are stored as nested nodes; the stored
normalization parameters and feature mask make an artifact self-contained
for streaming detection.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from .cart import LEAF, SPLIT_CONVENTION, DecisionTree, TreeParams
from .core_data import Dataset, FeatureSchema, NormalizationParams, normalize_rows
from .ensemble import BoostedModel, BoostParams, ForestModel
from .errors import InputError, SchemaMismatchError
from .stack_select import StackingModel

FORMAT_VERSION = 1


def _fmt_float(x: float) -> str:
    if not np.isfinite(x):
        raise InputError("cannot serialize non-finite value")
    if x == 0.0:
        x = 0.0  # fold -0.0 so reload/re-save is stable
    return format(float(x), ".17g")


def dumps_canonical(obj) -> str:
    """Deterministic pretty JSON: sorted keys, fixed float formatting."""
    pieces: list[str] = []
    _write(obj, pieces, 0)
    pieces.append("\n")
    return "".join(pieces)


def _write(obj, out: list[str], indent: int):
    pad = "  " * indent
    if obj is None:
        out.append("null")
    elif isinstance(obj, bool):
        out.append("true" if obj else "false")
    elif isinstance(obj, (int, np.integer)):
        out.append(str(int(obj)))
    elif isinstance(obj, (float, np.floating)):
        out.append(_fmt_float(float(obj)))
    elif isinstance(obj, str):
        out.append(json.dumps(obj))
    elif isinstance(obj, dict):
        if not obj:
            out.append("{}")
            return
        out.append("{")
        for i, key in enumerate(sorted(obj)):
            out.append(",\n" if i else "\n")
            out.append("  " * (indent + 1))
            out.append(json.dumps(str(key)))
            out.append(": ")
            _write(obj[key], out, indent + 1)
        out.append("\n" + pad + "}")
    elif isinstance(obj, (list, tuple, np.ndarray)):
        items = list(obj)
        if not items:
            out.append("[]")
            return
        out.append("[")
        for i, item in enumerate(items):
            out.append(",\n" if i else "\n")
            out.append("  " * (indent + 1))
            _write(item, out, indent + 1)
        out.append("\n" + pad + "]")
    else:
        raise InputError(f"cannot serialize {type(obj).__name__}")


def _tree_params_to_dict(params: TreeParams) -> dict:
    return {
        "max_depth": params.max_depth,
        "min_samples_split": params.min_samples_split,
        "min_samples_leaf": params.min_samples_leaf,
        "criterion": params.criterion,
        "feature_subset_size": params.feature_subset_size,
        "split_mode": params.split_mode,
        "seed": params.seed,
    }


def _tree_params_from_dict(d: dict) -> TreeParams:
    return TreeParams(**d)


def _tree_to_dict(tree: DecisionTree) -> dict:
    boosted = tree.leaf_weight is not None

    def node(i: int) -> dict:
        if tree.feature[i] == LEAF:
            leaf: dict = {"samples": int(tree.n_node_samples[i])}
            if boosted:
                leaf["weight"] = float(tree.leaf_weight[i])
            else:
                leaf["counts"] = [int(c) for c in tree.class_counts[i]]
            return leaf
        return {
            "feature": int(tree.feature[i]),
            "threshold": float(tree.threshold[i]),
            "gain": float(tree.split_score[i]),
            "samples": int(tree.n_node_samples[i]),
            "left": node(int(tree.left[i])),
            "right": node(int(tree.right[i])),
        }

    return node(0)


def _tree_from_dict(d: dict, n_features: int, n_classes: int,
                    params: TreeParams | None, feature_names) -> DecisionTree:
    feature, threshold, left, right = [], [], [], []
    samples, score, counts, weights = [], [], [], []
    boosted = None

    def build(node: dict) -> int:
        nonlocal boosted
        idx = len(feature)
        feature.append(LEAF)
        threshold.append(0.0)
        left.append(LEAF)
        right.append(LEAF)
        samples.append(node["samples"])
        score.append(node.get("gain", 0.0))
        counts.append(None)
        weights.append(0.0)
        if "feature" in node:
            feature[idx] = node["feature"]
            threshold[idx] = float(node["threshold"])
            left[idx] = build(node["left"])
            right[idx] = build(node["right"])
        elif "weight" in node:
            boosted = True
            weights[idx] = float(node["weight"])
        else:
            boosted = False
            counts[idx] = node["counts"]
        return idx

    build(d)
    if boosted is None:
        raise InputError("tree has no leaves")
    zeros = [0] * max(n_classes, 1)
    counts = [c if c is not None else zeros for c in counts]
    return DecisionTree(
        n_features=n_features,
        n_classes=n_classes,
        feature=np.array(feature, dtype=np.int32),
        threshold=np.array(threshold, dtype=np.float64),
        left=np.array(left, dtype=np.int32),
        right=np.array(right, dtype=np.int32),
        n_node_samples=np.array(samples, dtype=np.int64),
        split_score=np.array(score, dtype=np.float64),
        class_counts=None if boosted else np.array(counts, dtype=np.int64),
        leaf_weight=np.array(weights, dtype=np.float64) if boosted else None,
        params=params,
        feature_names=tuple(feature_names) if feature_names else None,
    )


def _model_to_dict(model) -> tuple[str, dict]:
    if isinstance(model, DecisionTree):
        return "dt", {
            "n_classes": model.n_classes,
            "params": _tree_params_to_dict(model.params),
            "tree": _tree_to_dict(model),
        }
    if isinstance(model, ForestModel):
        kind = "rf" if model.kind == "random_forest" else "et"
        return kind, {
            "n_classes": model.n_classes,
            "bootstrap": model.bootstrap,
            "feature_subset_size": model.feature_subset_size,
            "seed": model.seed,
            "tree_params": _tree_params_to_dict(model.trees[0].params),
            "trees": [_tree_to_dict(t) for t in model.trees],
        }
    if isinstance(model, BoostedModel):
        p = model.params
        return "boost", {
            "n_classes": model.n_classes,
            "params": {
                "rounds": p.rounds, "max_depth": p.max_depth, "lam": p.lam,
                "gamma": p.gamma, "learning_rate": p.learning_rate,
                "class_count": p.class_count, "seed": p.seed,
            },
            "base_score": [float(s) for s in model.base_score],
            "stages": [[_tree_to_dict(t) for t in stage] for stage in model.stages],
        }
    if isinstance(model, StackingModel):
        bases = []
        for base in model.base_models:
            k, body = _model_to_dict(base)
            bases.append({"kind": k, "body": body})
        meta_kind, meta_body = _model_to_dict(model.meta_model)
        return "stacking", {
            "n_classes": model.n_classes,
            "oof_fold_count": model.oof_fold_count,
            "bases": bases,
            "meta": {"kind": meta_kind, "body": meta_body},
        }
    raise InputError(f"cannot serialize model of type {type(model).__name__}")


def _model_from_dict(kind: str, body: dict, feature_names):
    n_features = len(feature_names)
    if kind == "dt":
        params = _tree_params_from_dict(body["params"])
        return _tree_from_dict(body["tree"], n_features, body["n_classes"], params, feature_names)
    if kind in ("rf", "et"):
        params = _tree_params_from_dict(body["tree_params"])
        trees = tuple(
            _tree_from_dict(t, n_features, body["n_classes"], params, feature_names)
            for t in body["trees"]
        )
        return ForestModel(
            trees=trees,
            kind="random_forest" if kind == "rf" else "extra_trees",
            bootstrap=body["bootstrap"],
            feature_subset_size=body["feature_subset_size"],
            seed=body["seed"],
            n_classes=body["n_classes"],
            feature_names=tuple(feature_names),
        )
    if kind == "boost":
        p = body["params"]
        params = BoostParams(rounds=p["rounds"], max_depth=p["max_depth"], lam=p["lam"],
                             gamma=p["gamma"], learning_rate=p["learning_rate"],
                             class_count=p["class_count"], seed=p["seed"])
        stages = tuple(
            tuple(_tree_from_dict(t, n_features, body["n_classes"], None, feature_names)
                  for t in stage)
            for stage in body["stages"]
        )
        return BoostedModel(
            stages=stages,
            base_score=np.asarray(body["base_score"], dtype=np.float64),
            params=params,
            n_classes=body["n_classes"],
            feature_names=tuple(feature_names),
        )
    if kind == "stacking":
        n_classes = body["n_classes"]
        base_kinds = []
        base_models = []
        for entry in body["bases"]:
            base_kinds.append(entry["kind"])
            # bases score the original feature space
            base_models.append(_model_from_dict(entry["kind"], entry["body"], feature_names))
        meta_width = n_classes * len(base_models)
        meta_names = tuple(f"meta{j}" for j in range(meta_width))
        meta = _model_from_dict(body["meta"]["kind"], body["meta"]["body"], meta_names)
        return StackingModel(
            base_kinds=tuple(base_kinds),
            base_models=tuple(base_models),
            meta_model=meta,
            oof_fold_count=body["oof_fold_count"],
            meta_offsets=tuple(b * n_classes for b in range(len(base_models))),
            n_classes=n_classes,
            feature_names=tuple(feature_names),
        )
    raise InputError(f"unknown model kind {kind!r} in artifact")


def dataset_fingerprint(dataset: Dataset) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(dataset.rows).tobytes())
    digest.update(np.ascontiguousarray(dataset.labels).tobytes())
    return digest.hexdigest()


def save_prepared(path, dataset: Dataset, normalization: NormalizationParams,
                  meta: dict | None = None) -> None:
    """Prepared-dataset file: cleaned raw values plus normalization params."""
    doc = {
        "schema": {
            "names": list(dataset.schema.names),
            "kinds": list(dataset.schema.kinds),
            "group_ids": list(dataset.schema.group_ids),
        },
        "label_names": {str(k): v for k, v in dataset.label_names.items()},
        "normalization": {
            "mins": [float(v) for v in normalization.mins],
            "maxs": [float(v) for v in normalization.maxs],
        },
        "meta": meta or {},
    }
    with open(path, "wb") as fh:
        np.savez(fh, rows=dataset.rows, labels=dataset.labels,
                 doc=np.frombuffer(dumps_canonical(doc).encode(), dtype=np.uint8))


def load_prepared(path) -> tuple[Dataset, NormalizationParams, dict]:
    try:
        with np.load(path) as bundle:
            rows = bundle["rows"]
            labels = bundle["labels"]
            doc = json.loads(bytes(bundle["doc"]).decode())
    except (KeyError, ValueError, OSError) as exc:
        raise InputError(f"cannot read prepared dataset {path}: {exc}") from exc
    schema = FeatureSchema(
        tuple(doc["schema"]["names"]),
        tuple(doc["schema"]["kinds"]),
        tuple(doc["schema"]["group_ids"]),
    )
    dataset = Dataset(schema, rows, labels,
                      {int(k): v for k, v in doc["label_names"].items()})
    mins = np.asarray(doc["normalization"]["mins"], dtype=np.float64)
    maxs = np.asarray(doc["normalization"]["maxs"], dtype=np.float64)
    params = NormalizationParams(schema.names, mins, maxs, mins == maxs)
    return dataset, params, doc.get("meta", {})


@dataclass(frozen=True)
class ModelArtifact:
    """Everything needed to score raw records: model, schema, normalization,
    label names, and the optional selected-feature mask."""

    kind: str
    model: object
    schema: FeatureSchema
    normalization: NormalizationParams | None
    label_names: dict[int, str]
    selected_features: np.ndarray | None = None
    metadata: dict | None = None

    def class_name(self, class_id: int) -> str:
        return self.label_names.get(class_id, str(class_id))

    @cached_property
    def _scoring_view(self) -> tuple[FeatureSchema, NormalizationParams | None]:
        """Schema and normalization restricted to the selected columns."""
        if self.selected_features is None:
            return self.schema, self.normalization
        sel = self.selected_features
        schema = FeatureSchema(
            tuple(self.schema.names[i] for i in sel),
            tuple(self.schema.kinds[i] for i in sel),
            tuple(self.schema.group_ids[i] for i in sel),
        )
        normalization = None
        if self.normalization is not None:
            normalization = NormalizationParams(
                schema.names, self.normalization.mins[sel],
                self.normalization.maxs[sel], self.normalization.degenerate[sel],
            )
        return schema, normalization

    def score(self, raw_rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(predicted classes, probability/vote vectors) for raw feature rows.

        Applies the stored normalization and feature mask; never recomputes
        statistics from the incoming data.  The mask is applied first so
        feature-selected models only pay for the columns they keep
        (normalization is per-column, so the order does not change values).
        """
        rows = np.atleast_2d(np.asarray(raw_rows, dtype=np.float64))
        if rows.shape[1] != self.schema.n_features:
            raise SchemaMismatchError(
                f"rows have {rows.shape[1]} features, artifact expects {self.schema.n_features}"
            )
        schema, normalization = self._scoring_view
        if self.selected_features is not None:
            rows = np.ascontiguousarray(rows[:, self.selected_features])
        if normalization is not None:
            rows = normalize_rows(rows, schema, normalization)
        proba = self.model.predict_proba(rows)
        return np.argmax(proba, axis=1), proba


def artifact_text(artifact: ModelArtifact) -> str:
    kind, body = _model_to_dict(artifact.model)
    if kind != artifact.kind:
        raise InputError(f"artifact kind {artifact.kind!r} does not match model {kind!r}")
    norm = None
    if artifact.normalization is not None:
        norm = {
            "mins": [float(v) for v in artifact.normalization.mins],
            "maxs": [float(v) for v in artifact.normalization.maxs],
        }
    doc = {
        "format_version": FORMAT_VERSION,
        "kind": artifact.kind,
        "split_convention": SPLIT_CONVENTION,
        "schema": {
            "names": list(artifact.schema.names),
            "kinds": list(artifact.schema.kinds),
            "group_ids": list(artifact.schema.group_ids),
        },
        "normalization": norm,
        "label_names": {str(k): v for k, v in artifact.label_names.items()},
        "selected_features": (None if artifact.selected_features is None
                              else [int(i) for i in artifact.selected_features]),
        "metadata": artifact.metadata or {},
        "model": body,
    }
    return dumps_canonical(doc)


def save_model(artifact: ModelArtifact, path) -> None:
    text = artifact_text(artifact)
    with open(path, "w") as fh:
        fh.write(text)


def load_model(path) -> ModelArtifact:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"corrupt model file {path}: {exc}") from exc
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise InputError(f"{path} is not a model artifact")
    if doc["format_version"] != FORMAT_VERSION:
        raise InputError(
            f"model format version {doc['format_version']} not supported "
            f"(this build reads version {FORMAT_VERSION})"
        )
    schema = FeatureSchema(
        tuple(doc["schema"]["names"]),
        tuple(doc["schema"]["kinds"]),
        tuple(doc["schema"]["group_ids"]),
    )
    norm = None
    if doc.get("normalization") is not None:
        mins = np.asarray(doc["normalization"]["mins"], dtype=np.float64)
        maxs = np.asarray(doc["normalization"]["maxs"], dtype=np.float64)
        norm = NormalizationParams(schema.names, mins, maxs, mins == maxs)
    selected = doc.get("selected_features")
    model_names = schema.names
    if selected is not None:
        selected = np.asarray(selected, dtype=np.int64)
        model_names = tuple(schema.names[i] for i in selected)
    model = _model_from_dict(doc["kind"], doc["model"], model_names)
    return ModelArtifact(
        kind=doc["kind"],
        model=model,
        schema=schema,
        normalization=norm,
        label_names={int(k): v for k, v in doc["label_names"].items()},
        selected_features=selected,
        metadata=doc.get("metadata") or {},
    )
