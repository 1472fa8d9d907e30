"""Classification metrics: one-vs-rest ROC-AUC, macro F1, accuracy."""

from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata


def binary_auc(scores, positive) -> float:
    """Mann-Whitney rank statistic; ties count one half."""
    scores = np.asarray(scores, dtype=np.float64)
    positive = np.asarray(positive, dtype=bool)
    n_pos = int(positive.sum())
    n_neg = len(positive) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("AUC needs at least one positive and one negative")
    ranks = rankdata(scores)
    return float((ranks[positive].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))


def roc_auc(scores, labels, num_classes: int | None = None) -> tuple[list[float | None], float]:
    """Per-class one-vs-rest AUC and their mean over the classes where it is defined.

    ``scores`` is (n,) for a binary problem (score of class 1) or (n, C).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.ndim == 1:
        scores = np.stack([-scores, scores], axis=1)
    C = scores.shape[1] if num_classes is None else num_classes
    per_class: list[float | None] = []
    for c in range(C):
        positive = labels == c
        if positive.all() or not positive.any():
            per_class.append(None)
            continue
        per_class.append(binary_auc(scores[:, c], positive))
    defined = [a for a in per_class if a is not None]
    if len(defined) < C:
        warnings.warn(f"AUC undefined for {C - len(defined)} class(es) lacking positives or negatives")
    mean = float(np.mean(defined)) if defined else float("nan")
    return per_class, mean


def confusion_matrix(preds, labels, num_classes: int) -> np.ndarray:
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {labels.shape}")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (labels, preds), 1)
    return cm


def macro_f1(preds, labels, num_classes: int | None = None) -> tuple[list[float], float]:
    preds, labels = np.asarray(preds), np.asarray(labels)
    C = int(max(preds.max(initial=0), labels.max(initial=0))) + 1 if num_classes is None else num_classes
    cm = confusion_matrix(preds, labels, C)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    f1 = []
    for c in range(C):
        precision = tp[c] / predicted[c] if predicted[c] else 0.0
        recall = tp[c] / actual[c] if actual[c] else 0.0
        f1.append(0.0 if precision + recall == 0 else 2 * precision * recall / (precision + recall))
    return f1, float(np.mean(f1))


def accuracy(preds, labels, num_classes: int | None = None) -> tuple[float, float]:
    """Overall accuracy and the mean one-vs-rest accuracy (TP + TN) / total over classes."""
    preds, labels = np.asarray(preds), np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError(f"length mismatch: {preds.shape} vs {labels.shape}")
    C = int(max(preds.max(initial=0), labels.max(initial=0))) + 1 if num_classes is None else num_classes
    overall = float((preds == labels).mean())
    per_class = [float(((preds == c) == (labels == c)).mean()) for c in range(C)]
    return overall, float(np.mean(per_class))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


@dataclass
class EvalReport:
    roc_auc_per_class: list
    roc_auc_mean: float
    f1_per_class: list
    f1_macro: float
    accuracy_overall: float
    accuracy_per_class_mean: float
    confusion_matrix: list

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2)

    def flat_row(self) -> dict:
        return dict(roc_auc=self.roc_auc_mean, f1_macro=self.f1_macro,
                    accuracy=self.accuracy_overall, accuracy_per_class_mean=self.accuracy_per_class_mean)


def evaluate_scores(probabilities, labels, num_classes: int) -> EvalReport:
    probabilities = np.asarray(probabilities, dtype=np.float64)
    labels = np.asarray(labels)
    preds = probabilities.argmax(axis=1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        auc_per, auc_mean = roc_auc(probabilities, labels, num_classes)
    f1_per, f1 = macro_f1(preds, labels, num_classes)
    acc, acc_pc = accuracy(preds, labels, num_classes)
    return EvalReport(auc_per, auc_mean, f1_per, f1, acc, acc_pc,
                      confusion_matrix(preds, labels, num_classes).tolist())
