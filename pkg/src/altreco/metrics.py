"""Ranked-retrieval evaluation.

Sample-averaged precision/recall/accuracy at k plus per-class (C-) and
globally pooled (O-) precision/recall/F1 at a fixed k.  Per-sample and
per-class terms are accumulated left to right in plain Python floats,
which keeps results bit-reproducible and easy to cross-check against a
brute-force implementation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import ContractError


@dataclass(frozen=True)
class PredictionSet:
    """One test sample: its ground-truth tags and the full ranking of
    tag indices by descending confidence (ties broken by ascending index)."""

    ground_truth: frozenset
    ranking: tuple

    def __post_init__(self):
        if not self.ground_truth:
            raise ContractError("every sample needs at least one ground-truth tag")
        if len(set(self.ranking)) != len(self.ranking):
            raise ContractError("ranking contains duplicate tag indices")


def top_k(scores: np.ndarray, k: int) -> list[int]:
    """Indices of the k largest scores, descending, ties by ascending index."""
    scores = np.asarray(scores)
    if scores.ndim != 1:
        raise ContractError(f"top_k expects a score vector, got shape {scores.shape}")
    if not 1 <= k <= scores.shape[0]:
        raise ContractError(f"k={k} out of range for {scores.shape[0]} scores")
    order = np.argsort(-scores, kind="stable")
    return [int(i) for i in order[:k]]


def rank_all(scores: np.ndarray) -> tuple:
    """Full ranking of every index, same tie rule as top_k."""
    return tuple(top_k(scores, int(np.asarray(scores).shape[0])))


def _check_k(preds: Sequence[PredictionSet], k: int) -> None:
    if k < 1:
        raise ContractError(f"k must be >= 1, got {k}")
    for pred in preds:
        if k > len(pred.ranking):
            raise ContractError(
                f"k={k} exceeds ranking length {len(pred.ranking)}"
            )


def precision_recall_accuracy_at_k(
    preds: Sequence[PredictionSet], k: int
) -> tuple[float, float, float]:
    """Sample-averaged P@k and R@k plus the at-least-one-hit rate."""
    _check_k(preds, k)
    precision_sum = 0.0
    recall_sum = 0.0
    hit_count = 0
    for pred in preds:
        hits = len(set(pred.ranking[:k]) & pred.ground_truth)
        precision_sum += hits / k
        recall_sum += hits / len(pred.ground_truth)
        if hits:
            hit_count += 1
    n = len(preds)
    return precision_sum / n, recall_sum / n, hit_count / n


def per_class_metrics(
    preds: Sequence[PredictionSet], k: int
) -> tuple[float, float, float]:
    """Unweighted class means of precision and recall, plus their F1.

    A class never predicted within top-k is skipped in the precision
    mean; one never present in any ground truth is skipped in the recall
    mean (no 0/0 terms).
    """
    _check_k(preds, k)
    predicted: dict[int, int] = {}
    correct: dict[int, int] = {}
    in_truth: dict[int, int] = {}
    for pred in preds:
        chosen = pred.ranking[:k]
        for tag in chosen:
            predicted[tag] = predicted.get(tag, 0) + 1
        for tag in pred.ground_truth:
            in_truth[tag] = in_truth.get(tag, 0) + 1
        for tag in set(chosen) & pred.ground_truth:
            correct[tag] = correct.get(tag, 0) + 1
    precision_terms = [correct.get(tag, 0) / count for tag, count in sorted(predicted.items())]
    recall_terms = [correct.get(tag, 0) / count for tag, count in sorted(in_truth.items())]
    class_p = sum(precision_terms) / len(precision_terms) if precision_terms else 0.0
    class_r = sum(recall_terms) / len(recall_terms) if recall_terms else 0.0
    return class_p, class_r, _f1(class_p, class_r)


def overall_metrics(preds: Sequence[PredictionSet], k: int) -> tuple[float, float, float]:
    """Globally pooled precision, recall and F1 at k."""
    _check_k(preds, k)
    total_correct = 0
    total_truth = 0
    for pred in preds:
        total_correct += len(set(pred.ranking[:k]) & pred.ground_truth)
        total_truth += len(pred.ground_truth)
    overall_p = total_correct / (k * len(preds))
    overall_r = total_correct / total_truth
    return overall_p, overall_r, _f1(overall_p, overall_r)


def _f1(p: float, r: float) -> float:
    return 2.0 * p * r / (p + r) if p + r > 0.0 else 0.0


METRIC_NAMES = ("P", "R", "Acc", "C-P", "C-R", "C-F1", "O-P", "O-R", "O-F1")


@dataclass
class MetricsReport:
    """All nine metrics for each evaluated k."""

    ks: tuple
    rows: dict  # k -> {metric name -> value}

    def to_records(self) -> list[str]:
        """Line-delimited ``k<TAB>metric<TAB>value`` records."""
        lines = []
        for k in self.ks:
            for name in METRIC_NAMES:
                lines.append(f"{k}\t{name}\t{self.rows[k][name]!r}")
        return lines

    def to_table(self) -> str:
        header = ["k"] + list(METRIC_NAMES)
        rows = [header]
        for k in self.ks:
            rows.append([str(k)] + [f"{self.rows[k][name]:.4f}" for name in METRIC_NAMES])
        widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
        return "\n".join(
            "  ".join(cell.rjust(widths[i]) for i, cell in enumerate(row)) for row in rows
        )


def compute_report(preds: Sequence[PredictionSet], ks: Iterable[int]) -> MetricsReport:
    ks = tuple(ks)
    rows = {}
    for k in ks:
        p, r, acc = precision_recall_accuracy_at_k(preds, k)
        class_p, class_r, class_f1 = per_class_metrics(preds, k)
        overall_p, overall_r, overall_f1 = overall_metrics(preds, k)
        rows[k] = {
            "P": p,
            "R": r,
            "Acc": acc,
            "C-P": class_p,
            "C-R": class_r,
            "C-F1": class_f1,
            "O-P": overall_p,
            "O-R": overall_r,
            "O-F1": overall_f1,
        }
    return MetricsReport(ks=ks, rows=rows)


def dump_predictions(preds: Sequence[PredictionSet], image_ids: Sequence[str], k: int) -> list[str]:
    """``image_id<TAB>comma-separated ranked tag indices`` lines."""
    _check_k(preds, k)
    return [
        f"{image_id}\t{','.join(str(t) for t in pred.ranking[:k])}"
        for image_id, pred in zip(image_ids, preds)
    ]
