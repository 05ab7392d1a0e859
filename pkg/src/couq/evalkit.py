"""Metrics and report assembly.

AUROC uses the rank-statistic formulation with exact tie handling (the
probability that a random novel sample outscores a random old one, ties
counted half). Continual accuracy is per-task test accuracy plus the
running mean over completed tasks; in unsupervised runs the discovered
class ids are aligned to true ids by maximum-weight bipartite matching on
the confusion counts before counting correctness.
"""

from __future__ import annotations

import csv
import io
import json
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import EvalError, UndefinedMetricError


def auroc(scores, labels) -> float:
    """Area under the ROC curve via the rank statistic.

    ``labels`` are binary: 0 for old, 1 for novel; higher scores should
    indicate novelty. Ties are handled exactly through midranks.
    """
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.shape != y.shape or s.ndim != 1:
        raise EvalError("scores and labels must be 1-D and aligned")
    n_pos = int((y == 1).sum())
    n_neg = int((y == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs both a positive and a negative")
    ranks = _midranks(s)
    rank_sum = ranks[y == 1].sum()
    u = rank_sum - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def _midranks(values: np.ndarray) -> np.ndarray:
    order = np.argsort(values, kind="mergesort")
    ranks = np.empty(len(values), dtype=np.float64)
    sorted_vals = values[order]
    i = 0
    while i < len(values):
        j = i
        while j + 1 < len(values) and sorted_vals[j + 1] == sorted_vals[i]:
            j += 1
        ranks[order[i : j + 1]] = (i + j) / 2.0 + 1.0
        i = j + 1
    return ranks


def match_discovered_classes(
    predicted: np.ndarray, truth: np.ndarray, synthetic_ids: set[int]
) -> dict[int, int]:
    """Map synthetic (discovered) class ids to true ids by Hungarian
    assignment on the confusion counts; unmatched ids map to -1."""
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    synth = sorted({int(p) for p in predicted if int(p) in synthetic_ids})
    true_ids = sorted({int(t) for t in truth})
    if not synth or not true_ids:
        return {}
    counts = np.zeros((len(synth), len(true_ids)))
    s_index = {c: i for i, c in enumerate(synth)}
    t_index = {c: i for i, c in enumerate(true_ids)}
    for p, t in zip(predicted, truth):
        if int(p) in s_index:
            counts[s_index[int(p)], t_index[int(t)]] += 1
    rows, cols = linear_sum_assignment(-counts)
    mapping = {c: -1 for c in synth}
    for r, c in zip(rows, cols):
        if counts[r, c] > 0:
            mapping[synth[r]] = true_ids[c]
    return mapping


def continual_accuracy(
    predictions: dict[int, int], truth: dict[int, int]
) -> float:
    """Fraction of test records predicted correctly; every record in
    ``truth`` must have a prediction."""
    if not truth:
        raise EvalError("empty test pool")
    correct = 0
    for rid, cls in truth.items():
        if rid not in predictions:
            raise EvalError(f"missing prediction for record {rid}")
        correct += int(predictions[rid] == cls)
    return correct / len(truth)


def cumulative_accuracy(per_task: list[float]) -> list[float]:
    """Running mean of per-task accuracies."""
    out, total = [], 0.0
    for i, acc in enumerate(per_task, start=1):
        total += acc
        out.append(total / i)
    return out


@dataclass
class TaskMetrics:
    task_index: int
    auroc: float | None
    accuracy: float | None
    label_spend: int
    iterations_executed: int
    novel_detected: int
    novel_true: int


@dataclass
class RunReport:
    method: str
    seed: int
    budget_fraction: float
    tasks: list[TaskMetrics] = field(default_factory=list)

    def averages(self) -> dict[str, float | None]:
        # Task 0 has no novelty decision, so it never enters the AUROC mean.
        aurocs = [t.auroc for t in self.tasks if t.auroc is not None and t.task_index > 0]
        accs = [t.accuracy for t in self.tasks if t.accuracy is not None]
        return {
            "auroc": float(np.mean(aurocs)) if aurocs else None,
            "accuracy": float(np.mean(accs)) if accs else None,
            "cumulative_accuracy": cumulative_accuracy(accs)[-1] if accs else None,
        }

    def to_json(self) -> str:
        doc = {
            "method": self.method,
            "seed": self.seed,
            "budget_fraction": self.budget_fraction,
            "tasks": [
                {
                    "task": t.task_index,
                    "auroc": t.auroc,
                    "accuracy": t.accuracy,
                    "label_spend": t.label_spend,
                    "iterations_executed": t.iterations_executed,
                    "novel_detected": t.novel_detected,
                    "novel_true": t.novel_true,
                }
                for t in self.tasks
            ],
            "averages": self.averages(),
        }
        return json.dumps(doc, indent=2, sort_keys=True)

    @staticmethod
    def from_json(text: str) -> "RunReport":
        doc = json.loads(text)
        report = RunReport(doc["method"], doc["seed"], doc["budget_fraction"])
        for t in doc["tasks"]:
            report.tasks.append(
                TaskMetrics(
                    t["task"], t["auroc"], t["accuracy"], t["label_spend"],
                    t["iterations_executed"], t["novel_detected"], t["novel_true"],
                )
            )
        return report


_SUMMARY_COLUMNS = [
    "method", "seed", "task", "auroc", "accuracy",
    "label_spend", "iterations", "novel_detected", "novel_true",
]
_PLOT_COLUMNS = ["method", "seed", "task", "budget", "metric_name", "value"]


def emit_report(reports: list[RunReport], out_dir: str) -> list[str]:
    """Write per-run JSONs, the cross-method summary CSV, and the
    plot-data CSV; outputs are byte-deterministic for equal inputs."""
    os.makedirs(out_dir, exist_ok=True)
    written: list[str] = []
    ordered = sorted(reports, key=lambda r: (r.method, r.seed))
    for report in ordered:
        path = os.path.join(out_dir, f"report_{report.method}_seed{report.seed}.json")
        _atomic_write(path, report.to_json() + "\n")
        written.append(path)

    summary = io.StringIO()
    writer = csv.writer(summary, lineterminator="\n")
    writer.writerow(_SUMMARY_COLUMNS)
    for report in ordered:
        for t in report.tasks:
            writer.writerow([
                report.method, report.seed, t.task_index,
                _fmt(t.auroc), _fmt(t.accuracy), t.label_spend,
                t.iterations_executed, t.novel_detected, t.novel_true,
            ])
    summary_path = os.path.join(out_dir, "summary.csv")
    _atomic_write(summary_path, summary.getvalue())
    written.append(summary_path)

    plot = io.StringIO()
    writer = csv.writer(plot, lineterminator="\n")
    writer.writerow(_PLOT_COLUMNS)
    for report in ordered:
        for t in report.tasks:
            if t.auroc is not None:
                writer.writerow([
                    report.method, report.seed, t.task_index,
                    _fmt(report.budget_fraction), "auroc", _fmt(t.auroc),
                ])
        accs = [t.accuracy for t in report.tasks if t.accuracy is not None]
        for t, cum in zip(
            [t for t in report.tasks if t.accuracy is not None],
            cumulative_accuracy(accs) if accs else [],
        ):
            writer.writerow([
                report.method, report.seed, t.task_index,
                _fmt(report.budget_fraction), "cumulative_accuracy", _fmt(cum),
            ])
    plot_path = os.path.join(out_dir, "plotdata.csv")
    _atomic_write(plot_path, plot.getvalue())
    written.append(plot_path)
    return written


def _fmt(value) -> str:
    return "" if value is None else repr(float(value))


def _atomic_write(path: str, text: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(text)
    os.replace(tmp, path)
