"""Double-precision attention oracle: exact scores, softmax, output, and top-k."""

from __future__ import annotations

import numpy as np

__all__ = ["true_scores", "softmax", "attention_exact", "top_k"]


def _as_matrix(m, name="matrix") -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ValueError(f"{name} must be 2-D and nonempty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def _as_vector(v, name="vector") -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1 or arr.shape[0] < 1:
        raise ValueError(f"{name} must be 1-D and nonempty, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} contains non-finite entries")
    return arr


def true_scores(key, query) -> np.ndarray:
    """Dot product of every key row with the query."""
    key = _as_matrix(key, "key")
    query = _as_vector(query, "query")
    if key.shape[1] != query.shape[0]:
        raise ValueError(f"key has {key.shape[1]} columns but query has {query.shape[0]}")
    return key @ query


def softmax(v) -> np.ndarray:
    """exp(v) normalized to sum 1, computed with max subtraction for stability."""
    v = _as_vector(v, "scores")
    e = np.exp(v - v.max())
    return e / e.sum()


def attention_exact(key, value, query) -> np.ndarray:
    """Softmax-weighted sum of value rows, scored by key-row dot products."""
    key = _as_matrix(key, "key")
    value = _as_matrix(value, "value")
    if key.shape != value.shape:
        raise ValueError(f"key {key.shape} and value {value.shape} shapes differ")
    return softmax(true_scores(key, query)) @ value


def top_k(scores, k: int) -> list:
    """Indices of the k largest scores, descending, ties broken by ascending index."""
    scores = _as_vector(scores, "scores")
    n = scores.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"k must be in [1, {n}], got {k}")
    return sorted(range(n), key=lambda r: (-scores[r], r))[:k]
