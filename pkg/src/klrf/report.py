"""Evaluation reports: confusion matrix, per-class metrics, delimited output,
and matplotlib figures rendered next to the machine-readable files."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np


@dataclass
class RunReport:
    label_names: list
    confusion: np.ndarray  # (Y, Y) rows = true class, columns = predicted
    config_echo: dict = field(default_factory=dict)
    seed: int = 0
    wall_clock: float = 0.0  # console-only; kept out of the report body

    @property
    def per_class_accuracy(self):
        totals = self.confusion.sum(axis=1)
        with np.errstate(invalid="ignore", divide="ignore"):
            acc = np.diag(self.confusion) / totals
        return np.where(totals > 0, acc, 0.0)

    @property
    def mean_accuracy(self):
        """Mean of the row-normalized confusion-matrix diagonal."""
        present = self.confusion.sum(axis=1) > 0
        return float(self.per_class_accuracy[present].mean())

    @property
    def precision(self):
        col = self.confusion.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            p = np.diag(self.confusion) / col
        present = self.confusion.sum(axis=1) > 0
        return float(np.where(col > 0, p, 0.0)[present].mean())

    @property
    def recall(self):
        return self.mean_accuracy

    def to_dict(self):
        return {
            "label_names": list(self.label_names),
            "confusion": self.confusion.astype(int).tolist(),
            "per_class_accuracy": self.per_class_accuracy.tolist(),
            "mean_accuracy": self.mean_accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "config": self.config_echo,
            "seed": self.seed,
        }

    def summary_lines(self):
        lines = [
            f"mean accuracy: {self.mean_accuracy:.4f}",
            f"precision:     {self.precision:.4f}",
            f"recall:        {self.recall:.4f}",
        ]
        for name, acc, count in zip(
            self.label_names, self.per_class_accuracy, self.confusion.sum(axis=1)
        ):
            lines.append(f"  {name:<16} acc={acc:.4f}  n={int(count)}")
        lines.append(f"wall clock: {self.wall_clock:.2f}s")
        return lines


def from_predictions(y_true, y_pred, label_names, config_echo=None, seed=0, wall_clock=0.0):
    n = len(label_names)
    confusion = np.zeros((n, n), dtype=int)
    for t, p in zip(y_true, y_pred):
        confusion[t, p] += 1
    return RunReport(
        label_names=list(label_names),
        confusion=confusion,
        config_echo=config_echo or {},
        seed=seed,
        wall_clock=wall_clock,
    )


def write_report(report, out_dir, figures=True, usefulness_by_class=None):
    """Write report.json, delimited CSVs, and PNG figures into out_dir."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "report.json").write_text(
        json.dumps(report.to_dict(), indent=2, sort_keys=True) + "\n"
    )
    with open(out_dir / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "accuracy", "support"])
        for name, acc, count in zip(
            report.label_names, report.per_class_accuracy, report.confusion.sum(axis=1)
        ):
            w.writerow([name, f"{acc:.6f}", int(count)])
        w.writerow(["__mean__", f"{report.mean_accuracy:.6f}",
                    int(report.confusion.sum())])
    with open(out_dir / "confusion.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["true\\pred"] + list(report.label_names))
        for name, row in zip(report.label_names, report.confusion):
            w.writerow([name] + [int(v) for v in row])
    if usefulness_by_class is not None:
        with open(out_dir / "usefulness_by_class.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["class", "mean_usefulness", "support"])
            for name, (mean_u, count) in usefulness_by_class.items():
                w.writerow([name, f"{mean_u:.6f}", count])
    if figures:
        render_figures(report, out_dir, usefulness_by_class)
    return out_dir


def render_figures(report, out_dir, usefulness_by_class=None):
    out_dir = Path(out_dir)
    names = list(report.label_names)

    fig, ax = plt.subplots(figsize=(5.5, 4.5))
    row_sums = report.confusion.sum(axis=1, keepdims=True).clip(min=1)
    im = ax.imshow(report.confusion / row_sums, cmap="Blues", vmin=0, vmax=1)
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right", fontsize=8)
    ax.set_yticks(range(len(names)), names, fontsize=8)
    ax.set_xlabel("predicted")
    ax.set_ylabel("true")
    ax.set_title(f"confusion (mean acc {report.mean_accuracy:.3f})")
    fig.colorbar(im, ax=ax, fraction=0.046)
    fig.tight_layout()
    fig.savefig(out_dir / "confusion_matrix.png", dpi=120)
    plt.close(fig)

    fig, ax = plt.subplots(figsize=(5.5, 3.2))
    ax.bar(range(len(names)), report.per_class_accuracy, color="steelblue")
    ax.set_xticks(range(len(names)), names, rotation=45, ha="right", fontsize=8)
    ax.set_ylim(0, 1)
    ax.set_ylabel("accuracy")
    ax.set_title("per-class accuracy")
    fig.tight_layout()
    fig.savefig(out_dir / "per_class_accuracy.png", dpi=120)
    plt.close(fig)

    if usefulness_by_class is not None:
        fig, ax = plt.subplots(figsize=(5.5, 3.2))
        labels = list(usefulness_by_class)
        values = [usefulness_by_class[k][0] for k in labels]
        colors = ["seagreen" if v > 0 else "indianred" for v in values]
        ax.bar(range(len(labels)), values, color=colors)
        ax.axhline(0.0, color="black", linewidth=0.8)
        ax.set_xticks(range(len(labels)), labels, rotation=45, ha="right", fontsize=8)
        ax.set_ylabel("mean usefulness U(V)")
        ax.set_title("usefulness score by class")
        fig.tight_layout()
        fig.savefig(out_dir / "usefulness_by_class.png", dpi=120)
        plt.close(fig)


def usefulness_table(model):
    """Per-class (mean usefulness, count) from training artifacts."""
    if model.usefulness is None:
        return None
    out = {}
    for i, name in enumerate(model.label_names):
        mask = model.sample_labels == i
        if mask.any():
            out[name] = (float(model.usefulness[mask].mean()), int(mask.sum()))
        else:
            out[name] = (0.0, 0)
    return out
