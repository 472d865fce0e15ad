"""Evaluation metrics: rank-based ROC-AUC with tie handling, accuracy, loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from fedsim import kernels
from fedsim.data import Dataset
from fedsim.errors import UndefinedAucError
from fedsim.model import BCE_CLIP, MlpParams


@dataclass(frozen=True)
class EvalReport:
    auc: float
    accuracy: float
    mean_loss: float
    n_pos: int
    n_neg: int


def roc_auc(scores, labels) -> float:
    """Probability a random positive outranks a random negative, ties 0.5.

    Mann-Whitney statistic via average ranks, O(n log n), exact for ties
    (multiples of 0.5 are exact in doubles, so this matches brute-force
    pair counting bit for bit).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape:
        raise ValueError(f"scores {scores.shape} vs labels {labels.shape}")
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAucError("both classes required to compute AUC")
    order = np.argsort(scores, kind="mergesort")
    sorted_scores = scores[order]
    first = np.searchsorted(sorted_scores, sorted_scores, side="left")
    last = np.searchsorted(sorted_scores, sorted_scores, side="right")
    ranks = np.empty(scores.size)
    ranks[order] = (first + last + 1) / 2.0  # 1-based average rank
    rank_sum = ranks[pos].sum()
    return (rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def evaluate(params: MlpParams, test_set: Dataset) -> EvalReport:
    """Score every test record and fill the report.

    Accuracy uses threshold 0.5 with ties predicted as 0 (diagnostic only).
    """
    X = test_set.feature_matrix()
    y = test_set.labels()
    probs = kernels.predict_proba(params.theta, params.layer_sizes, X)
    auc = roc_auc(probs, y.astype(np.int64))
    predictions = probs > 0.5
    accuracy = float((predictions == (y == 1.0)).mean())
    clipped = np.clip(probs, BCE_CLIP, 1.0 - BCE_CLIP)
    losses = -(y * np.log(clipped) + (1.0 - y) * np.log(1.0 - clipped))
    n_pos = int((y == 1.0).sum())
    return EvalReport(
        auc=float(auc),
        accuracy=accuracy,
        mean_loss=float(losses.mean()),
        n_pos=n_pos,
        n_neg=int(y.size - n_pos),
    )
