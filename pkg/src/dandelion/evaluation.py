"""Open-set prediction and evaluation metrics.

Two modes: "acc" scores the full K+1-way prediction (shared categories
1..K plus the collapsed unknown label K+1); "ind" first collapses both
predictions and ground truth to binary normal-vs-intrusion, where every
non-normal known category and the unknown label count as intrusion.

Weighted precision/recall/F1 weight each class by its ground-truth share.
Counts are combined in exact rational arithmetic, so weighted recall equals
accuracy exactly, not just to round-off.
"""
from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .model import Model, classify


@dataclass
class CategoryCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0
    truth_count: int = 0

    def as_dict(self) -> dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn,
                "truth_count": self.truth_count}


@dataclass
class Metrics:
    mode: str
    accuracy: float
    precision: float
    recall: float
    f1: float
    per_category: dict[int, CategoryCounts]

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "accuracy": self.accuracy,
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "per_category": {str(k): v.as_dict() for k, v in self.per_category.items()},
        }


def predict_labels(model: Model, target_features: np.ndarray) -> np.ndarray:
    """Argmax class per row, 1-based in 1..K+1; ties go to the lowest index."""
    probs = classify(model, np.asarray(target_features, dtype=np.float64)).data
    return np.argmax(probs, axis=1).astype(np.int64) + 1


def _binary_collapse(labels: np.ndarray, normal_label: int) -> np.ndarray:
    # 1 = normal, 2 = intrusion (every other known category and K+1)
    return np.where(labels == normal_label, 1, 2).astype(np.int64)


def compute_metrics(
    predictions: np.ndarray,
    ground_truth: np.ndarray,
    k: int,
    mode: str = "acc",
    normal_label: int | None = None,
) -> Metrics:
    """Accuracy plus class-weighted precision/recall/F1 over a label set.

    Labels are 1-based; ACC mode scores classes 1..K+1 and IND mode scores
    the binary collapse around normal_label. A class never predicted takes
    precision 0 so the weighted sums stay defined.
    """
    predictions = np.asarray(predictions, dtype=np.int64).reshape(-1)
    ground_truth = np.asarray(ground_truth, dtype=np.int64).reshape(-1)
    if predictions.shape[0] != ground_truth.shape[0]:
        raise ValueError(
            f"{predictions.shape[0]} predictions vs {ground_truth.shape[0]} ground-truth labels"
        )
    if predictions.shape[0] == 0:
        raise ValueError("cannot score an empty prediction set")
    for name, arr in (("predictions", predictions), ("ground truth", ground_truth)):
        if arr.min() < 1 or arr.max() > k + 1:
            raise ValueError(f"{name} outside 1..{k + 1}")

    if mode == "acc":
        classes = list(range(1, k + 2))
    elif mode == "ind":
        if normal_label is None or not (1 <= normal_label <= k):
            raise ValueError("ind mode needs normal_label in 1..K")
        predictions = _binary_collapse(predictions, normal_label)
        ground_truth = _binary_collapse(ground_truth, normal_label)
        classes = [1, 2]
    else:
        raise ValueError(f"mode must be acc|ind, got {mode!r}")

    n = predictions.shape[0]
    per_category: dict[int, CategoryCounts] = {}
    precision = Fraction(0)
    recall = Fraction(0)
    f1 = Fraction(0)
    correct = 0
    for c in classes:
        tp = int(np.sum((predictions == c) & (ground_truth == c)))
        fp = int(np.sum((predictions == c) & (ground_truth != c)))
        fn = int(np.sum((predictions != c) & (ground_truth == c)))
        tn = n - tp - fp - fn
        truth_count = tp + fn
        per_category[c] = CategoryCounts(tp=tp, fp=fp, fn=fn, tn=tn, truth_count=truth_count)
        correct += tp
        if truth_count == 0:
            continue
        weight = Fraction(truth_count, n)
        p_c = Fraction(tp, tp + fp) if tp + fp else Fraction(0)
        r_c = Fraction(tp, truth_count)
        precision += weight * p_c
        recall += weight * r_c
        if p_c + r_c:
            f1 += weight * (2 * p_c * r_c / (p_c + r_c))
    accuracy = Fraction(correct, n)
    return Metrics(
        mode=mode,
        accuracy=float(accuracy),
        precision=float(precision),
        recall=float(recall),
        f1=float(f1),
        per_category=per_category,
    )


def openness(k: int, k_prime: int) -> float:
    """Fraction of target categories unseen in the source: 1 - K/K'."""
    if k < 1 or k > k_prime:
        raise ValueError(f"need 1 <= K <= K', got K={k}, K'={k_prime}")
    return 1.0 - k / k_prime
