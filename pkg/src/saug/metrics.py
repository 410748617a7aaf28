"""Classification and ranking metrics."""
from __future__ import annotations

import numpy as np
from scipy.stats import rankdata


def f1_scores(pred, truth, num_classes: int | None = None):
    """Return ``(macro_f1, micro_f1, per_class_f1)``.

    Per-class F1 is 2PR/(P+R), defined as 0 when P+R = 0.  Macro averages
    over all ``num_classes`` classes; micro pools the counts, which equals
    accuracy for single-label multiclass data.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError("pred and truth lengths differ")
    if pred.size == 0:
        raise ValueError("f1 of an empty prediction vector")
    if num_classes is None:
        num_classes = int(max(pred.max(), truth.max())) + 1
    tp = np.bincount(truth[pred == truth], minlength=num_classes)[:num_classes].astype(float)
    pred_count = np.bincount(pred, minlength=num_classes)[:num_classes].astype(float)
    true_count = np.bincount(truth, minlength=num_classes)[:num_classes].astype(float)
    denom = pred_count + true_count
    per_class = np.divide(2 * tp, denom, out=np.zeros(num_classes), where=denom > 0)
    micro = 2 * tp.sum() / (pred_count.sum() + true_count.sum())
    return float(per_class.mean()), float(micro), per_class


def auc_score(scores, labels) -> float:
    """Probability that a random positive outranks a random negative (ties count 1/2)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(bool)
    n_pos = int(labels.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise ValueError("auc needs both positive and negative items")
    ranks = rankdata(scores)  # average ranks handle ties
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2) / (n_pos * n_neg))
