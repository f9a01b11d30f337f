"""Ranking metrics over per-impression score vectors.

All functions take a binary relevance vector ``labels`` and a parallel
``scores`` vector. Higher scores mean the item is ranked earlier. Ties
are handled explicitly: AUC uses midranks, while the rank-based metrics
break ties by original index so results are stable across runs.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np
from scipy.stats import rankdata

from .errors import ContractError, UndefinedMetricError

__all__ = ["auc", "mrr", "ndcg_at_k", "ranked_order"]


def _validate(labels: Sequence[int], scores: Sequence[float]) -> tuple[np.ndarray, np.ndarray]:
    y = np.asarray(labels, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if y.ndim != 1 or s.ndim != 1:
        raise ContractError("labels and scores must be one-dimensional")
    if y.shape != s.shape:
        raise ContractError(
            f"labels and scores must align, got {y.shape} vs {s.shape}"
        )
    if y.size == 0:
        raise ContractError("metrics need at least one candidate")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ContractError("labels must be binary")
    if not np.all(np.isfinite(s)):
        raise ContractError("scores must be finite")
    return y, s


def ranked_order(scores: Sequence[float]) -> list[int]:
    """Indices sorted by descending score, original index breaking ties."""

    s = np.asarray(scores, dtype=np.float64)
    return sorted(range(s.size), key=lambda i: (-s[i], i))


def auc(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Area under the ROC curve via the midrank formulation.

    Equivalent to the probability that a uniformly drawn positive
    outscores a uniformly drawn negative, counting ties as one half.
    Raises UndefinedMetricError when either class is absent.
    """

    y, s = _validate(labels, scores)
    n_pos = int(y.sum())
    n_neg = y.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError(
            f"AUC needs both classes, got {n_pos} positives and {n_neg} negatives"
        )
    ranks = rankdata(s)
    pos_rank_sum = float(ranks[y == 1.0].sum())
    return (pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def mrr(labels: Sequence[int], scores: Sequence[float]) -> float:
    """Mean reciprocal rank over every clicked item.

    Averages 1/rank across all positives rather than stopping at the
    first one. Returns 0.0 when the impression has no positives.
    """

    y, s = _validate(labels, scores)
    order = ranked_order(s)
    total = 0.0
    n_pos = 0
    for rank, idx in enumerate(order, start=1):
        if y[idx] == 1.0:
            total += 1.0 / rank
            n_pos += 1
    if n_pos == 0:
        return 0.0
    return total / n_pos


def ndcg_at_k(labels: Sequence[int], scores: Sequence[float], k: int) -> float:
    """Normalized discounted cumulative gain with binary gains.

    The ideal ordering places all positives first, so the normalizer is
    the DCG of min(k, n_pos) leading ones. Returns 0.0 when there are
    no positives.
    """

    if k < 1:
        raise ContractError(f"k must be positive, got {k}")
    y, s = _validate(labels, scores)
    n_pos = int(y.sum())
    if n_pos == 0:
        return 0.0
    order = ranked_order(s)
    dcg = 0.0
    for rank, idx in enumerate(order[:k], start=1):
        if y[idx] == 1.0:
            dcg += 1.0 / np.log2(rank + 1)
    ideal = sum(1.0 / np.log2(r + 1) for r in range(1, min(k, n_pos) + 1))
    return dcg / ideal
