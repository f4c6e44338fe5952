import numpy as np
import pandas as pd

from errors import ShapeError, UndefinedAUCError


def auc(scores, labels) -> float:
    """Rank-based (Mann-Whitney) ROC area; tied scores share their average rank."""
    scores = np.asarray(scores, dtype=np.float64).reshape(-1)
    labels = np.asarray(labels).reshape(-1).astype(bool)
    if scores.shape != labels.shape:
        raise ShapeError(f"auc: {scores.size} scores for {labels.size} labels")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedAUCError(f"auc needs both classes, got {n_pos} positive and {n_neg} negative")
    ranks = pd.Series(scores).rank(method="average").to_numpy()
    return float((ranks[labels].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def macro_auc(scores, labels, n_classes=None) -> float:
    """One-vs-rest AUC averaged over classes; ``scores`` is (N, K), ``labels`` integer classes."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).reshape(-1)
    if scores.ndim != 2 or scores.shape[0] != labels.size:
        raise ShapeError(f"macro_auc: scores {scores.shape} do not match {labels.size} labels")
    n_classes = scores.shape[1] if n_classes is None else n_classes
    return float(np.mean([auc(scores[:, k], labels == k) for k in range(n_classes)]))
