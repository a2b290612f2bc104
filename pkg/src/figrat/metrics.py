"""Evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp
from scipy.stats import rankdata

from .errors import DimensionError, UndefinedMetricError


@dataclass
class MetricReport:
    name: str
    value: float
    n_samples: int
    per_seed: dict[int, float] = field(default_factory=dict)

    @classmethod
    def aggregate(cls, name: str, per_seed: dict[int, float], n_samples: int) -> "MetricReport":
        return cls(name, float(np.mean(list(per_seed.values()))), n_samples, dict(per_seed))


def roc_auc(scores, labels) -> float:
    """P(random positive outranks random negative), ties worth one half.

    Mann-Whitney form: average ranks handle ties exactly.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise DimensionError(f"roc_auc: scores {scores.shape} vs labels {labels.shape}")
    if not np.all((labels == 0) | (labels == 1)):
        raise ValueError("roc_auc labels must be 0/1")
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("roc_auc needs both classes present")
    ranks = rankdata(scores)
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def regression_metrics(preds, targets) -> dict[str, float]:
    preds = np.asarray(preds, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    if preds.shape != targets.shape:
        raise DimensionError(f"regression_metrics: {preds.shape} vs {targets.shape}")
    if preds.size == 0:
        raise DimensionError("regression_metrics needs at least one sample")
    r = preds - targets
    return {"rmse": float(np.sqrt(np.mean(r * r))), "mae": float(np.mean(np.abs(r)))}


def classification_metrics(logits: np.ndarray, labels: np.ndarray) -> dict[str, float]:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    lse = logsumexp(logits, axis=1)
    out = {
        "accuracy": float(np.mean(np.argmax(logits, axis=1) == labels)),
        "loss": float(np.mean(lse - logits[np.arange(len(labels)), labels])),
    }
    if logits.shape[1] == 2 and 0 < labels.sum() < len(labels):
        out["auc"] = roc_auc(logits[:, 1] - logits[:, 0], labels)
    return out
