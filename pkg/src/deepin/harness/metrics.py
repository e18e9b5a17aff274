"""Prediction, selection and structure metrics plus replication summaries."""

import math

import numpy as np

from deepin.errors import ContractViolation
from deepin.model import Task

__all__ = [
    "auc",
    "prediction_metrics",
    "selection_metrics",
    "structure_metrics",
    "summarize",
]


def auc(scores, labels):
    """Area under the ROC curve with strict comparisons.

    Counts positive/negative pairs with ``score_pos > score_neg``; ties count
    zero.  Returns ``None`` when only one class is present.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    if scores.shape != labels.shape:
        raise ContractViolation("scores and labels must have the same length")
    pos = scores[labels == 1]
    neg = np.sort(scores[labels == 0])
    if pos.size == 0 or neg.size == 0:
        return None
    below = np.searchsorted(neg, pos, side="left")
    return int(below.sum()) / (pos.size * neg.size)


def prediction_metrics(pred, y, f0=None, task=Task.REGRESSION):
    """Test-set metrics.

    For regression ``pred`` holds predictions: ``PE = sum (pred - y)^2 / sum y^2``
    and ``MSE`` is the mean squared distance to ``f0`` when given, else to
    ``y``.  For binary tasks ``pred`` holds positive-class probabilities:
    ``ACC`` thresholds at 0.5 and ``AUC`` uses :func:`auc`.
    """
    pred = np.asarray(pred, dtype=float)
    y = np.asarray(y, dtype=float)
    if pred.shape != y.shape:
        raise ContractViolation("predictions and responses must have the same length")
    task = Task(task)
    out = {}
    if task is Task.REGRESSION:
        denom = float(np.sum(y * y))
        out["PE"] = float(np.sum((pred - y) ** 2)) / denom if denom > 0 else None
        target = y if f0 is None else np.asarray(f0, dtype=float)
        out["MSE"] = float(np.mean((pred - target) ** 2))
    else:
        out["ACC"] = float(np.mean((pred > 0.5) == (y == 1)))
        out["AUC"] = auc(pred, y)
        if out["AUC"] is None:
            out["diagnostic"] = "AUC undefined: only one class present"
    return out


def selection_metrics(selected, support, d):
    """``(TPR, FPR)`` of an estimated variable set against the true support."""
    selected = {int(i) for i in selected}
    support = {int(i) for i in support}
    if not support:
        raise ContractViolation("true support is empty")
    if len(support) >= d:
        raise ContractViolation("true support has an empty complement")
    if any(i < 0 or i >= d for i in selected | support):
        raise ContractViolation("index out of range")
    tpr = len(selected & support) / len(support)
    fpr = len(selected - support) / (d - len(support))
    return tpr, fpr


def structure_metrics(model):
    """``Dims``, ``#Variables`` and ``Prop0`` of a fitted model."""
    B = model.B
    theta = model.net.theta
    return {
        "Dims": int(np.count_nonzero(np.linalg.norm(B, axis=1))),
        "Variables": int(np.count_nonzero(np.linalg.norm(B, axis=0))),
        "Prop0": 1.0 - np.count_nonzero(theta) / theta.size,
    }


def summarize(rows, keys):
    """Mean and sample standard deviation of each key over successful rows.

    Missing values (``None`` or empty) are skipped.  The SD of a single value
    is reported as 0.
    """
    out = {}
    for key in keys:
        vals = [float(r[key]) for r in rows if r.get(key) not in (None, "")]
        vals = [v for v in vals if not math.isnan(v)]
        if not vals:
            out[key] = {"mean": None, "sd": None, "count": 0}
            continue
        arr = np.array(vals)
        sd = float(arr.std(ddof=1)) if arr.size > 1 else 0.0
        out[key] = {"mean": float(arr.mean()), "sd": sd, "count": int(arr.size)}
    return out
