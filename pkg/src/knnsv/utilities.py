"""KNN utility functions v(S) for a single test point.

Each utility scores a subset ``S`` of training indices by how well an
unweighted KNN model fit on ``S`` predicts ``y_test``. Subsets are ranked
by filtering the full-data :class:`SortedIndex`, so distance ties follow
the same index convention everywhere.
"""

from __future__ import annotations

import numpy as np

from .core import InputError, SortedIndex


def distances_to(x: np.ndarray, query) -> np.ndarray:
    query = np.asarray(query, dtype=np.float64).ravel()
    if query.size != x.shape[1]:
        raise InputError(f"query has dimension {query.size}, dataset has {x.shape[1]}")
    diff = x - query
    return np.sqrt(np.einsum("ij,ij->i", diff, diff))


def sort_by_distance(dataset, query) -> SortedIndex:
    """Order training points by l2 distance to ``query``; ties go to the lower index."""
    x = dataset.x if hasattr(dataset, "x") else np.asarray(dataset, dtype=np.float64)
    if x.ndim == 1:
        x = x[:, None]
    return SortedIndex.from_distances(distances_to(x, query))


def nearest_in_subset(subset, sorted_index: SortedIndex, k: int) -> list[int]:
    """The min(k, |S|) members of ``subset`` closest to the query, nearest first."""
    members = set(subset)
    out = []
    for i in sorted_index.order:
        if i in members:
            out.append(int(i))
            if len(out) == k:
                break
    return out


def utility_soft_classification(subset, sorted_index, labels, y_test, k, c) -> float:
    if len(subset) == 0:
        return 1.0 / c
    top = nearest_in_subset(subset, sorted_index, k)
    return sum(labels[i] == y_test for i in top) / len(top)


def utility_original_classification(subset, sorted_index, labels, y_test, k) -> float:
    if len(subset) == 0:
        return 0.0
    top = nearest_in_subset(subset, sorted_index, k)
    return sum(labels[i] == y_test for i in top) / k


def utility_soft_regression(subset, sorted_index, labels, y_test, k) -> float:
    if len(subset) == 0:
        return -float(y_test) ** 2
    top = nearest_in_subset(subset, sorted_index, k)
    pred = sum(float(labels[i]) for i in top) / len(top)
    return -((pred - y_test) ** 2)


def utility_original_regression(subset, sorted_index, labels, y_test, k) -> float:
    top = nearest_in_subset(subset, sorted_index, k)
    pred = sum(float(labels[i]) for i in top) / k
    return -((pred - y_test) ** 2)


UTILITIES = {
    "soft-classification": utility_soft_classification,
    "original-classification": utility_original_classification,
    "soft-regression": utility_soft_regression,
    "original-regression": utility_original_regression,
}


def bind_utility(method, sorted_index, labels, y_test, k, c=None):
    """Close a utility over one test point, leaving a function of the subset only."""
    fn = UTILITIES[method]
    if method == "soft-classification":
        return lambda s: fn(s, sorted_index, labels, y_test, k, c)
    return lambda s: fn(s, sorted_index, labels, y_test, k)


def empty_utility(method, y_test, c=None) -> float:
    """v(empty set) for each utility."""
    if method == "soft-classification":
        return 1.0 / c
    if method == "original-classification":
        return 0.0
    return -float(y_test) ** 2
