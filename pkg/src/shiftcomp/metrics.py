"""Multi-label ranking metrics and importance-weighted risk.

Per-label AUC and AP are undefined when a label column contains a
single class; those labels are reported as None and excluded from the
macro averages rather than averaged in as placeholders.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .errors import ShapeError
from .shift import ShiftWeights

PROB_CLAMP = 1e-6


def _as_binary_labels(labels):
    arr = np.asarray(labels, dtype=np.float64).ravel()
    if not np.isin(arr, (0.0, 1.0)).all():
        raise ValueError("labels must be 0/1")
    return arr


def auc(scores, labels):
    """Area under the ROC curve, rank-based; ties earn half credit.

    Returns None when only one class is present.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = _as_binary_labels(labels)
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores vs {labels.size} labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    rank_sum = ranks[labels == 1.0].sum()
    return float((rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def average_precision(scores, labels):
    """Mean precision at the rank of each positive, best scores first.

    Ties are broken by original index so the value is deterministic.
    Returns None when there are no positives.
    """
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = _as_binary_labels(labels)
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores vs {labels.size} labels")
    n_pos = int(labels.sum())
    if n_pos == 0:
        return None
    order = np.lexsort((np.arange(scores.size), -scores))
    hits = labels[order]
    cum_hits = np.cumsum(hits)
    ranks = np.arange(1, scores.size + 1)
    precision_at_pos = (cum_hits / ranks)[hits == 1.0]
    return float(precision_at_pos.sum() / n_pos)


def f1(scores, labels, threshold=0.5):
    """F1 at a fixed threshold; zero when precision and recall are both zero."""
    scores = np.asarray(scores, dtype=np.float64).ravel()
    labels = _as_binary_labels(labels)
    if scores.shape != labels.shape:
        raise ShapeError(f"{scores.size} scores vs {labels.size} labels")
    preds = scores > threshold
    tp = float(np.sum(preds & (labels == 1.0)))
    fp = float(np.sum(preds & (labels == 0.0)))
    fn = float(np.sum(~preds & (labels == 1.0)))
    if tp == 0.0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return float(2.0 * precision * recall / (precision + recall))


def weighted_risk(per_sample_losses, w):
    """Mean of w_i * loss_i over the training sample."""
    losses = np.asarray(per_sample_losses, dtype=np.float64).ravel()
    values = w.values if isinstance(w, ShiftWeights) else np.asarray(w, dtype=np.float64).ravel()
    if losses.shape != values.shape:
        raise ShapeError(f"{losses.size} losses vs {values.size} weights")
    return float((values * losses).mean())


def effective_sample_size(w):
    """Kish's measure: n * mean(w)^2 / mean(w^2)."""
    values = w.values if isinstance(w, ShiftWeights) else np.asarray(w, dtype=np.float64).ravel()
    denom = (values ** 2).mean()
    if denom == 0.0:
        return 0.0
    return float(values.size * values.mean() ** 2 / denom)


def binary_cross_entropy_rows(probs, labels):
    """Per-sample cross-entropy summed over label columns, clamped."""
    probs = np.clip(np.asarray(probs, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.shape != labels.shape:
        raise ShapeError(f"probs {probs.shape} vs labels {labels.shape}")
    return -(labels * np.log(probs) + (1.0 - labels) * np.log(1.0 - probs)).sum(axis=1)


@dataclass
class MetricsReport:
    """Per-label and macro-averaged evaluation of multi-label scores."""

    per_label_auc: list
    per_label_ap: list
    per_label_f1: list
    macro_auc: float
    macro_ap: float
    macro_f1: float
    excluded_labels: list
    threshold: float
    n_samples: int
    n_labels: int
    unweighted_risk: float
    weighted_risk: float

    def as_dict(self):
        return {
            "per_label_auc": self.per_label_auc,
            "per_label_ap": self.per_label_ap,
            "per_label_f1": self.per_label_f1,
            "macro_auc": self.macro_auc,
            "macro_ap": self.macro_ap,
            "macro_f1": self.macro_f1,
            "excluded_labels": self.excluded_labels,
            "threshold": self.threshold,
            "n_samples": self.n_samples,
            "n_labels": self.n_labels,
            "unweighted_risk": self.unweighted_risk,
            "weighted_risk": self.weighted_risk,
        }


def evaluate_multilabel(probs, labels, threshold=0.5, weights=None):
    """Score an (n, L) probability matrix against 0/1 labels.

    Labels whose column has a single class get None for AUC and AP and
    are excluded from the macro averages.  The risk fields hold the mean
    per-sample cross-entropy, unweighted and reweighted by ``weights``.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if probs.ndim == 1:
        probs = probs.reshape(-1, 1)
    if labels.ndim == 1:
        labels = labels.reshape(-1, 1)
    if probs.shape != labels.shape:
        raise ShapeError(f"probs {probs.shape} vs labels {labels.shape}")

    n, n_labels = probs.shape
    aucs, aps, f1s, excluded = [], [], [], []
    for j in range(n_labels):
        a = auc(probs[:, j], labels[:, j])
        p = average_precision(probs[:, j], labels[:, j])
        aucs.append(a)
        aps.append(p)
        f1s.append(f1(probs[:, j], labels[:, j], threshold))
        if a is None or p is None:
            excluded.append(j)

    defined = [j for j in range(n_labels) if j not in excluded]
    macro_auc = float(np.mean([aucs[j] for j in defined])) if defined else None
    macro_ap = float(np.mean([aps[j] for j in defined])) if defined else None
    macro_f1 = float(np.mean([f1s[j] for j in defined])) if defined else None

    losses = binary_cross_entropy_rows(probs, labels)
    w = np.ones(n) if weights is None else weights
    return MetricsReport(
        per_label_auc=aucs,
        per_label_ap=aps,
        per_label_f1=f1s,
        macro_auc=macro_auc,
        macro_ap=macro_ap,
        macro_f1=macro_f1,
        excluded_labels=excluded,
        threshold=float(threshold),
        n_samples=n,
        n_labels=n_labels,
        unweighted_risk=float(losses.mean()),
        weighted_risk=weighted_risk(losses, w),
    )
