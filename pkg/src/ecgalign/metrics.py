"""Rank-statistic AUC and thresholded F1, with macro aggregation.

AUC is the Mann-Whitney statistic: P(score_pos > score_neg) + 0.5 P(tie),
computed from tie-averaged ranks. Single-class inputs have no defined AUC;
they are signaled as None and excluded from macro averages.
"""

from __future__ import annotations

import numpy as np


def _average_ranks(scores: np.ndarray) -> np.ndarray:
    order = np.argsort(scores, kind="mergesort")
    ranks = np.empty(len(scores), dtype=np.float64)
    sorted_scores = scores[order]
    i = 0
    while i < len(scores):
        j = i
        while j + 1 < len(scores) and sorted_scores[j + 1] == sorted_scores[i]:
            j += 1
        ranks[order[i:j + 1]] = 0.5 * (i + j) + 1.0
        i = j + 1
    return ranks


def compute_auc(scores, labels) -> float | None:
    """Area under the ROC curve via the rank statistic; None if undefined."""
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    if s.ndim != 1 or s.shape != y.shape or s.size < 1:
        raise ValueError("scores and labels must be equal-length 1-D arrays")
    n_pos = int(np.sum(y == 1))
    n_neg = int(np.sum(y == 0))
    if n_pos + n_neg != s.size:
        raise ValueError("labels must be binary")
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = _average_ranks(s)
    pos_rank_sum = float(np.sum(ranks[y == 1]))
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def compute_f1(scores, labels, threshold: float = 0.5) -> float:
    s = np.asarray(scores, dtype=np.float64)
    y = np.asarray(labels)
    pred = s >= threshold
    tp = int(np.sum(pred & (y == 1)))
    fp = int(np.sum(pred & (y == 0)))
    fn = int(np.sum(~pred & (y == 1)))
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2.0 * precision * recall / (precision + recall)


def macro_from_matrix(score_matrix: np.ndarray, label_matrix: np.ndarray,
                      threshold: float = 0.5):
    """Per-class AUC/F1 plus macro means over classes with both labels present."""
    scores = np.asarray(score_matrix, dtype=np.float64)
    labels = np.asarray(label_matrix)
    if scores.shape != labels.shape or scores.ndim != 2:
        raise ValueError("score and label matrices must be [n, C] with equal shape")
    per_auc: list[float | None] = []
    per_f1: list[float] = []
    defined: list[int] = []
    for c in range(scores.shape[1]):
        auc = compute_auc(scores[:, c], labels[:, c])
        per_auc.append(auc)
        per_f1.append(compute_f1(scores[:, c], labels[:, c], threshold))
        if auc is not None:
            defined.append(c)
    macro_auc = float(np.mean([per_auc[c] for c in defined])) if defined else None
    macro_f1 = float(np.mean([per_f1[c] for c in defined])) if defined else None
    return per_auc, macro_auc, per_f1, macro_f1
