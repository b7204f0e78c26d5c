"""Command-line interface: prepare, train, evaluate, select-features,
grid-search, and streaming detect.

Exit codes: 0 success, 2 input/parse error, 3 schema mismatch, 4 internal
failure.  All randomness flows from --seed; --threads sizes the worker pool
without changing any result.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import time
from dataclasses import replace

import numpy as np

from . import stack_select  # noqa: F401  (registers the stacking model kind)
from .core_data import Dataset, compute_min_max, drop_invalid_rows, normalize
from .detect import DEFAULT_BATCH_SIZE, detect_stream, summarize
from .errors import InputError, SchemaMismatchError, TreeIdsError
from .evaluation import (
    compute_metrics,
    confusion_matrix,
    cross_validate,
    grid_search,
)
from .ingest import (
    LabelMapSpec,
    consolidate_labels,
    encode_can_features,
    parse_can_csv,
    parse_flow_csv,
)
from .model_io import (
    ModelArtifact,
    dataset_fingerprint,
    load_model,
    load_prepared,
    save_model,
    save_prepared,
)
from .models import ModelSpec, SINGULAR_KINDS, fit_model
from .resample import ResamplePlan, apply_resample
from .stack_select import (
    SingularReport,
    average_importance,
    per_attack_importance,
    select_base_and_meta,
    singular_importances,
)
from . import report as report_mod

PROFILES = ("can", "flow")
MODEL_KINDS = SINGULAR_KINDS + ("stacking",)


def _add_common_model_flags(p: argparse.ArgumentParser):
    p.add_argument("--model", choices=MODEL_KINDS, default="rf")
    p.add_argument("--trees", type=int, default=200, help="tree count / boosting rounds")
    p.add_argument("--depth", type=int, default=8)
    p.add_argument("--min-split", type=int, default=8)
    p.add_argument("--min-leaf", type=int, default=3)
    p.add_argument("--criterion", choices=("gini", "entropy"), default="gini")
    p.add_argument("--lam", type=float, default=1.0, help="boosting L2 leaf penalty")
    p.add_argument("--gamma", type=float, default=0.0, help="boosting per-leaf penalty")
    p.add_argument("--learning-rate", type=float, default=0.3)
    p.add_argument("--bases", default=None,
                   help="stacking base kinds, e.g. dt,rf,et (default: auto-select)")
    p.add_argument("--meta", default=None, help="stacking meta kind (default: auto-select)")


def _add_resample_flags(p: argparse.ArgumentParser):
    p.add_argument("--oversample", choices=("none", "random", "smote"), default="none")
    p.add_argument("--smote-k", type=int, default=5)
    p.add_argument("--target-ratio", type=float, default=1.0)


def _add_run_flags(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)


def _model_params(args) -> dict:
    return {
        "n_trees": args.trees,
        "max_depth": args.depth,
        "min_samples_split": args.min_split,
        "min_samples_leaf": args.min_leaf,
        "criterion": args.criterion,
        "lam": args.lam,
        "gamma": args.gamma,
        "learning_rate": args.learning_rate,
    }


def _resample_plan(args) -> ResamplePlan | None:
    if args.oversample == "none":
        return None
    return ResamplePlan(method=args.oversample, k_neighbors=args.smote_k,
                        seed=args.seed, target_ratio=args.target_ratio)


def _singular_spec(kind: str, params: dict) -> ModelSpec:
    return ModelSpec(kind, dict(params))


def _build_spec(args, dataset: Dataset, params: dict,
                resample_plan, out=sys.stdout) -> ModelSpec:
    """ModelSpec from CLI flags; stacking may auto-select bases and meta."""
    if args.model != "stacking":
        return _singular_spec(args.model, params)
    if args.bases and args.meta:
        bases = tuple(b.strip() for b in args.bases.split(","))
    else:
        print("auto-selecting stacking bases by singular cross-validation", file=out)
        reports = []
        for kind in SINGULAR_KINDS:
            result = cross_validate(_singular_spec(kind, params), dataset,
                                    k=args.folds, seed=args.seed,
                                    resample_plan=resample_plan, threads=args.threads)
            reports.append(SingularReport(kind, result.aggregate.accuracy,
                                          result.aggregate.train_time))
            print(f"  {kind}: acc={result.aggregate.accuracy:.6f} "
                  f"time={result.aggregate.train_time:.2f}s", file=out)
        bases, meta = select_base_and_meta(reports)
        if args.bases:
            bases = tuple(b.strip() for b in args.bases.split(","))
        if args.meta:
            meta = args.meta
        print(f"  bases={','.join(bases)} meta={meta}", file=out)
        args.meta = meta
    for kind in bases + (args.meta,):
        if kind not in SINGULAR_KINDS:
            raise InputError(f"stacking base/meta kind {kind!r} is not one of {SINGULAR_KINDS}")
    return ModelSpec("stacking", {
        "base_specs": [_singular_spec(k, params) for k in bases],
        "meta_spec": _singular_spec(args.meta, params),
        "oof_folds": args.folds,
    })


def _normal_class_id(dataset: Dataset, name: str | None) -> int:
    if name is None:
        return 0
    for class_id, class_name in dataset.label_names.items():
        if class_name == name:
            return class_id
    raise InputError(f"class {name!r} not found; have {sorted(dataset.label_names.values())}")


def _print_class_counts(dataset: Dataset, out):
    counts = dataset.class_counts()
    for class_id in range(dataset.n_classes):
        print(f"  {dataset.label_names[class_id]}: {int(counts[class_id]):,}", file=out)


# ---------------------------------------------------------------- prepare


def cmd_prepare(args) -> int:
    out = sys.stdout
    if args.profile == "can":
        records = []
        for item in args.inputs:
            path, _, hint = item.partition("=")
            hint = hint or None
            if not os.path.exists(path):
                raise InputError(f"input file not found: {path}")
            with open(path) as fh:
                file_records = parse_can_csv(fh, label_hint=hint,
                                             malformed_tolerance=args.tolerance)
            print(f"parsed {len(file_records):,} frames from {path}"
                  + (f" (attack label {hint})" if hint else ""), file=out)
            records.extend(file_records)
        dataset = encode_can_features(records, mode=args.encoding)
    else:
        if args.label_map:
            label_map = LabelMapSpec.from_file(args.label_map)
        else:
            label_map = LabelMapSpec.default_cicids2017()
        records = []
        for path in args.inputs:
            if not os.path.exists(path):
                raise InputError(f"input file not found: {path}")
            with open(path, encoding="latin-1") as fh:
                file_records = parse_flow_csv(fh, label_column=args.label_column)
            print(f"parsed {len(file_records):,} flows from {path}", file=out)
            records.extend(file_records)
        dataset = consolidate_labels(records, label_map)

    dataset, removed = drop_invalid_rows(dataset)
    params = compute_min_max(dataset)
    meta = {"profile": args.profile, "removed_rows": removed}
    if args.profile == "can":
        meta["encoding"] = args.encoding
    save_prepared(args.out, dataset, params, meta)
    print(f"removed {removed:,} invalid rows; {dataset.n_rows:,} rows, "
          f"{dataset.n_features} features -> {args.out}", file=out)
    print("class counts:", file=out)
    _print_class_counts(dataset, out)
    if dataset.n_classes == 1:
        print("warning: dataset contains a single class; training needs at least two", file=out)
    return 0


# ---------------------------------------------------------------- train


def cmd_train(args) -> int:
    out = sys.stdout
    raw, norm_params, _meta = load_prepared(args.dataset)
    dataset = normalize(raw, norm_params)
    plan = _resample_plan(args)
    if plan is not None:
        before = dataset.n_rows
        dataset = apply_resample(dataset, plan)
        print(f"oversampled ({args.oversample}): {before:,} -> {dataset.n_rows:,} rows", file=out)

    selected = None
    if args.feature_select:
        importances = singular_importances(dataset, n_trees=args.fs_trees,
                                           seed=args.seed, threads=args.threads)
        fs_report = average_importance(importances, threshold=args.fs_threshold)
        selected = np.sort(fs_report.selected)
        names = [dataset.schema.names[i] for i in fs_report.selected]
        print(f"feature selection kept {len(selected)} of {dataset.n_features}: "
              + ", ".join(names[:10]) + ("..." if len(names) > 10 else ""), file=out)
        dataset = dataset.select_features(selected)

    params = _model_params(args)
    spec = _build_spec(args, dataset, params, plan, out)
    t0 = time.perf_counter()
    model = fit_model(spec, dataset, seed=args.seed, threads=args.threads)
    train_time = time.perf_counter() - t0

    artifact = ModelArtifact(
        kind=spec.kind,
        model=model,
        schema=raw.schema,
        normalization=norm_params,
        label_names=dict(dataset.label_names),
        selected_features=selected,
        metadata={
            "seed": args.seed,
            "params": params,
            "oversample": args.oversample,
            "dataset_sha256": dataset_fingerprint(raw),
        },
    )
    save_model(artifact, args.out)
    print(f"trained {spec.kind} in {train_time:.2f}s -> {args.out}", file=out)
    return 0


# ---------------------------------------------------------------- evaluate


def _remap_labels_to_artifact(dataset: Dataset, artifact: ModelArtifact) -> np.ndarray:
    by_name = {name: class_id for class_id, name in artifact.label_names.items()}
    mapping = {}
    for class_id, name in dataset.label_names.items():
        if name not in by_name:
            raise SchemaMismatchError(f"dataset class {name!r} unknown to the model")
        mapping[class_id] = by_name[name]
    lut = np.zeros(max(mapping) + 1, dtype=np.int64)
    for src, dst in mapping.items():
        lut[src] = dst
    return lut[dataset.labels]


def cmd_evaluate(args) -> int:
    out = sys.stdout
    raw, norm_params, _meta = load_prepared(args.dataset)
    outdir = args.outdir
    if outdir:
        os.makedirs(outdir, exist_ok=True)

    if args.artifact:
        artifact = load_model(args.artifact)
        if artifact.schema.names != raw.schema.names:
            first = next((a for a, b in zip(artifact.schema.names, raw.schema.names) if a != b),
                         "(feature count)")
            raise SchemaMismatchError(f"artifact schema differs from dataset at {first!r}")
        true_labels = _remap_labels_to_artifact(raw, artifact)
        t0 = time.perf_counter()
        predicted, _proba = artifact.score(raw.rows)
        predict_time = time.perf_counter() - t0
        k = max(len(artifact.label_names), int(true_labels.max()) + 1)
        cm = confusion_matrix(true_labels, predicted, k, artifact.label_names)
        normal_id = 0
        if args.normal_class:
            by_name = {name: cid for cid, name in artifact.label_names.items()}
            if args.normal_class not in by_name:
                raise InputError(f"class {args.normal_class!r} unknown to the model")
            normal_id = by_name[args.normal_class]
        rep = replace(compute_metrics(cm, normal_id), predict_time=predict_time)
        print(report_mod.metrics_table([(f"artifact:{artifact.kind}", rep)]), file=out)
        if outdir:
            report_mod.write_metrics_csv(os.path.join(outdir, "metrics.csv"),
                                         [(f"artifact:{artifact.kind}", rep)])
            report_mod.write_confusion_csv(os.path.join(outdir, "confusion.csv"), cm)
            report_mod.plot_confusion(cm, os.path.join(outdir, "confusion.png"))
            print(f"wrote metrics.csv, confusion.csv, confusion.png to {outdir}", file=out)
        return 0

    dataset = normalize(raw, norm_params)
    normal_id = _normal_class_id(dataset, args.normal_class)
    plan = _resample_plan(args)
    selected = None
    if args.feature_select:
        importances = singular_importances(dataset, n_trees=args.fs_trees,
                                           seed=args.seed, threads=args.threads)
        selected = np.sort(average_importance(importances, threshold=args.fs_threshold).selected)
        print(f"feature selection kept {len(selected)} of {dataset.n_features} features", file=out)

    params = _model_params(args)
    spec = _build_spec(args, dataset, params, plan, out)
    result = cross_validate(spec, dataset, k=args.folds, seed=args.seed,
                            resample_plan=plan, feature_subset=selected,
                            normal_class_id=normal_id, threads=args.threads)
    rows = [(f"fold {i + 1}", rep) for i, rep in enumerate(result.fold_reports)]
    rows.append(("mean", result.aggregate))
    rows.append(("pooled", result.pooled))
    print(report_mod.metrics_table(rows), file=out)
    if outdir:
        report_mod.write_metrics_csv(os.path.join(outdir, "metrics.csv"), rows)
        report_mod.write_confusion_csv(os.path.join(outdir, "confusion.csv"),
                                       result.pooled_confusion)
        report_mod.plot_confusion(result.pooled_confusion,
                                  os.path.join(outdir, "confusion.png"))
        report_mod.plot_fold_metrics(result, os.path.join(outdir, "folds.png"))
        print(f"wrote metrics.csv, confusion.csv, confusion.png, folds.png to {outdir}", file=out)
    return 0


# ---------------------------------------------------------------- select-features


def cmd_select_features(args) -> int:
    out = sys.stdout
    raw, norm_params, _meta = load_prepared(args.dataset)
    dataset = normalize(raw, norm_params)
    if dataset.n_classes < 2:
        raise InputError("feature selection needs at least two classes")
    outdir = args.outdir or "."
    os.makedirs(outdir, exist_ok=True)

    importances = singular_importances(dataset, n_trees=args.trees,
                                       seed=args.seed, threads=args.threads)
    rep = average_importance(importances, threshold=args.fs_threshold)
    names = dataset.schema.names
    ranked = [(names[i], float(rep.averaged[i])) for i in rep.ranking]
    table_path = os.path.join(outdir, "importance.csv")
    report_mod.write_importance_csv(table_path, ranked)
    report_mod.plot_importance(ranked, os.path.join(outdir, "importance.png"),
                               title="averaged feature importance")
    kept = [names[i] for i in rep.selected]
    print(f"selected {len(kept)} of {dataset.n_features} features "
          f"(cumulative importance >= {args.fs_threshold:g}):", file=out)
    for name in kept:
        print(f"  {name}", file=out)
    print(f"wrote importance.csv, importance.png to {outdir}", file=out)

    if args.per_attack:
        normal_id = _normal_class_id(dataset, args.normal_class)
        tables = {}
        for class_id in range(dataset.n_classes):
            if class_id == normal_id:
                continue
            label = dataset.label_names[class_id]
            tables[label] = per_attack_importance(
                dataset, class_id, normal_id,
                n_trees=args.trees, seed=args.seed, threads=args.threads,
            )
        report_mod.write_per_attack_csv(os.path.join(outdir, "per_attack_importance.csv"),
                                        tables)
        print("top-3 features per attack:", file=out)
        for label, pairs in tables.items():
            for name, weight in pairs[:3]:
                print(f"  {label}: {name} ({weight:.4f})", file=out)
            report_mod.plot_importance(
                pairs, os.path.join(outdir, f"importance_{label.replace('/', '_')}.png"),
                top_n=10, title=f"{label} vs normal",
            )
        print(f"wrote per_attack_importance.csv and per-attack figures to {outdir}", file=out)
    return 0


# ---------------------------------------------------------------- grid-search


def cmd_grid_search(args) -> int:
    out = sys.stdout
    raw, norm_params, _meta = load_prepared(args.dataset)
    dataset = normalize(raw, norm_params)
    t_grid = [int(v) for v in args.trees_grid.split(",")]
    d_grid = [int(v) for v in args.depth_grid.split(",")]
    result = grid_search(args.model, dataset, t_grid, d_grid, seed=args.seed,
                         k=args.folds, tolerance=args.tolerance, threads=args.threads,
                         base_params={"min_samples_split": args.min_split,
                                      "min_samples_leaf": args.min_leaf,
                                      "criterion": args.criterion})
    for p in result.evaluated:
        print(f"T={p.n_trees:<5d} D={p.max_depth:<3d} acc={p.accuracy:.6f} "
              f"time={p.train_time:.2f}s", file=out)
    print(f"chosen: T={result.chosen[0]} D={result.chosen[1]} ({result.stop_reason})", file=out)
    if args.outdir:
        os.makedirs(args.outdir, exist_ok=True)
        with open(os.path.join(args.outdir, "grid.csv"), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["n_trees", "max_depth", "accuracy", "train_time_s"])
            for p in result.evaluated:
                writer.writerow([p.n_trees, p.max_depth, p.accuracy, p.train_time])
        report_mod.plot_grid_search(result, os.path.join(args.outdir, "grid.png"))
        print(f"wrote grid.csv, grid.png to {args.outdir}", file=out)
    return 0


# ---------------------------------------------------------------- detect


def cmd_synth_can(args) -> int:
    from .synthetic import write_capture_files

    paths = write_capture_files(args.outdir, n_frames=args.frames, seed=args.seed)
    for label, path in paths.items():
        print(f"{label}: {path}")
    return 0


def cmd_detect(args) -> int:
    artifact = load_model(args.artifact)
    if args.input == "-":
        lines = sys.stdin
        closer = None
    else:
        if not os.path.exists(args.input):
            raise InputError(f"input file not found: {args.input}")
        closer = open(args.input)
        lines = closer
    verdicts = []
    t0 = time.perf_counter()
    try:
        for verdict in detect_stream(artifact, lines, args.profile,
                                     batch_size=args.batch_size):
            print(verdict.line())
            verdicts.append(verdict)
    finally:
        if closer is not None:
            closer.close()
    elapsed = time.perf_counter() - t0
    for line in summarize(verdicts, elapsed).lines():
        print(line)
    return 0


# ---------------------------------------------------------------- wiring


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="treeids",
        description="Tree-ensemble intrusion detection for CAN and flow traffic",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="parse, clean, and bundle raw captures")
    p.add_argument("inputs", nargs="+",
                   help="input files; CAN attack captures as path=LABEL")
    p.add_argument("--profile", choices=PROFILES, required=True)
    p.add_argument("--encoding", choices=("numeric", "one_hot_id"), default="numeric")
    p.add_argument("--label-map", default=None, help="raw_label,consolidated_class CSV")
    p.add_argument("--label-column", default="Label")
    p.add_argument("--tolerance", type=float, default=0.001,
                   help="malformed-line tolerance as a fraction")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="fit a model and save the artifact")
    p.add_argument("dataset")
    _add_common_model_flags(p)
    _add_resample_flags(p)
    _add_run_flags(p)
    p.add_argument("--feature-select", action="store_true")
    p.add_argument("--fs-threshold", type=float, default=0.9)
    p.add_argument("--fs-trees", type=int, default=200,
                   help="trees per learner for the importance average")
    p.add_argument("--folds", type=int, default=5,
                   help="OOF folds for stacking / auto-selection")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="cross-validate a spec or score an artifact")
    p.add_argument("dataset")
    p.add_argument("--artifact", default=None, help="score this model file instead of CV")
    _add_common_model_flags(p)
    _add_resample_flags(p)
    _add_run_flags(p)
    p.add_argument("--feature-select", action="store_true")
    p.add_argument("--fs-threshold", type=float, default=0.9)
    p.add_argument("--fs-trees", type=int, default=200)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--normal-class", default=None,
                   help="class name counted as normal traffic (default: first class)")
    p.add_argument("--outdir", default=None, help="write CSV tables and figures here")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("select-features", help="averaged-importance feature selection")
    p.add_argument("dataset")
    p.add_argument("--per-attack", action="store_true")
    p.add_argument("--fs-threshold", type=float, default=0.9)
    p.add_argument("--trees", type=int, default=200)
    p.add_argument("--normal-class", default=None)
    _add_run_flags(p)
    p.add_argument("--outdir", default=None)
    p.set_defaults(func=cmd_select_features)

    p = sub.add_parser("grid-search", help="tune tree count and depth")
    p.add_argument("dataset")
    p.add_argument("--model", choices=SINGULAR_KINDS, default="rf")
    p.add_argument("--trees-grid", default="50,100,200")
    p.add_argument("--depth-grid", default="2,4,6,8,10")
    p.add_argument("--min-split", type=int, default=8)
    p.add_argument("--min-leaf", type=int, default=3)
    p.add_argument("--criterion", choices=("gini", "entropy"), default="gini")
    p.add_argument("--tolerance", type=float, default=0.001,
                   help="accuracy drop that stops a grid dimension")
    p.add_argument("--folds", type=int, default=5)
    _add_run_flags(p)
    p.add_argument("--outdir", default=None)
    p.set_defaults(func=cmd_grid_search)

    p = sub.add_parser("detect", help="stream records through a trained model")
    p.add_argument("input", help="record file, or - for stdin")
    p.add_argument("--artifact", required=True)
    p.add_argument("--profile", choices=PROFILES, required=True)
    p.add_argument("--batch-size", type=int, default=DEFAULT_BATCH_SIZE)
    p.set_defaults(func=cmd_detect)

    p = sub.add_parser("synth-can", help="generate synthetic CAN capture files")
    p.add_argument("--outdir", required=True)
    p.add_argument("--frames", type=int, default=50_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_synth_can)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except SchemaMismatchError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except (InputError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except TreeIdsError as exc:
        print(f"internal error: {exc}", file=sys.stderr)
        return 4
    except Exception as exc:  # invariant failures and bugs
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
