"""Report rendering: aligned text tables, CSV exports, and figures.

Every CLI report path that writes delimited output can also render the
matching matplotlib figure next to it (confusion heatmap, importance bars,
fold metrics, grid-search curves).
"""

from __future__ import annotations

import csv

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .evaluation import ConfusionMatrix, CrossValResult, GridSearchResult, MetricsReport


def _pct(value: float | None) -> str:
    return "-" if value is None else f"{value * 100:.4g}"


def _num(value: float | None, fmt: str = ".3f") -> str:
    return "-" if value is None else format(value, fmt)


METRIC_COLUMNS = ("Method", "Acc (%)", "DR (%)", "FAR (%)", "F1", "Time (s)")


def metrics_row(name: str, report: MetricsReport) -> tuple[str, ...]:
    return (
        name,
        _pct(report.accuracy),
        _pct(report.detection_rate),
        _pct(report.false_alarm_rate),
        _num(report.f1_weighted),
        _num(report.train_time, ".2f"),
    )


def metrics_table(rows: list[tuple[str, MetricsReport]]) -> str:
    """Aligned text table with the evaluation columns used in the reports."""
    table = [METRIC_COLUMNS] + [metrics_row(name, rep) for name, rep in rows]
    widths = [max(len(r[c]) for r in table) for c in range(len(METRIC_COLUMNS))]
    lines = []
    for i, row in enumerate(table):
        lines.append("  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip())
        if i == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines)


def write_metrics_csv(path, rows: list[tuple[str, MetricsReport]]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["method", "accuracy", "detection_rate", "false_alarm_rate",
                         "f1_weighted", "f1_macro", "train_time_s", "predict_time_s"])
        for name, r in rows:
            writer.writerow([
                name, r.accuracy,
                "" if r.detection_rate is None else r.detection_rate,
                "" if r.false_alarm_rate is None else r.false_alarm_rate,
                r.f1_weighted, r.f1_macro, r.train_time, r.predict_time,
            ])


def write_confusion_csv(path, cm: ConfusionMatrix):
    k = cm.counts.shape[0]
    names = [cm.name(i) for i in range(k)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["true\\predicted"] + names)
        for i in range(k):
            writer.writerow([names[i]] + [int(c) for c in cm.counts[i]])


def write_importance_csv(path, pairs: list[tuple[str, float]]):
    """Two-column feature/weight table in ranking order."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["feature", "weight"])
        for name, weight in pairs:
            writer.writerow([name, weight])


def write_per_attack_csv(path, tables: dict[str, list[tuple[str, float]]]):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "feature", "weight"])
        for label, pairs in tables.items():
            for name, weight in pairs:
                writer.writerow([label, name, weight])


def plot_confusion(cm: ConfusionMatrix, path):
    k = cm.counts.shape[0]
    names = [cm.name(i) for i in range(k)]
    shares = cm.counts / np.maximum(cm.counts.sum(axis=1, keepdims=True), 1)
    fig, ax = plt.subplots(figsize=(1.2 * k + 2.5, 1.0 * k + 2.0))
    im = ax.imshow(shares, cmap="Blues", vmin=0.0, vmax=1.0)
    ax.set_xticks(range(k), names, rotation=45, ha="right")
    ax.set_yticks(range(k), names)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    for i in range(k):
        for j in range(k):
            color = "white" if shares[i, j] > 0.5 else "black"
            ax.text(j, i, f"{cm.counts[i, j]:,}", ha="center", va="center",
                    color=color, fontsize=8)
    fig.colorbar(im, ax=ax, label="row share")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_importance(pairs: list[tuple[str, float]], path, top_n: int = 20, title: str = ""):
    head = pairs[:top_n]
    names = [p[0] for p in head][::-1]
    weights = [p[1] for p in head][::-1]
    fig, ax = plt.subplots(figsize=(8, 0.35 * len(head) + 1.5))
    ax.barh(range(len(head)), weights, color="#336699")
    ax.set_yticks(range(len(head)), names, fontsize=8)
    ax.set_xlabel("averaged importance")
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_fold_metrics(result: CrossValResult, path):
    folds = range(1, len(result.fold_reports) + 1)
    acc = [r.accuracy for r in result.fold_reports]
    far = [r.false_alarm_rate if r.false_alarm_rate is not None else np.nan
           for r in result.fold_reports]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    ax1.plot(folds, acc, "o-", color="#336699")
    ax1.axhline(result.aggregate.accuracy, ls="--", color="gray", lw=1)
    ax1.set_xlabel("fold")
    ax1.set_ylabel("accuracy")
    ax2.plot(folds, far, "o-", color="#993333")
    ax2.set_xlabel("fold")
    ax2.set_ylabel("false alarm rate")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def plot_grid_search(result: GridSearchResult, path):
    fig, ax = plt.subplots(figsize=(7, 4))
    depths = sorted({p.max_depth for p in result.evaluated})
    for depth in depths:
        points = [p for p in result.evaluated if p.max_depth == depth]
        ax.plot([p.n_trees for p in points], [p.accuracy for p in points],
                "o-", label=f"depth {depth}")
    chosen = result.chosen
    best = next(p for p in result.evaluated
                if (p.n_trees, p.max_depth) == chosen)
    ax.plot([best.n_trees], [best.accuracy], "k*", markersize=14,
            label=f"chosen T={chosen[0]} D={chosen[1]}")
    ax.set_xlabel("trees")
    ax.set_ylabel("cv accuracy")
    ax.legend(fontsize=8)
    ax.set_title(f"stop: {result.stop_reason}")
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
